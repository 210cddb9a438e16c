"""Orthogonalized-gradient SGD, convergence checks and calibration evaluation."""
from .calibration import CalibrationReport, evaluate, fit_temperature
from .convergence import AnalyticLoss, boundary_stationarity_check, run_plain_perp, run_renorm_perp
from .netcore import Network, ParamGroup, PredictionBatch, homogeneity_check, scale_group
from .optim import GradientStep, OptimConfig, Optimizer, orthogonalize, renormalize
from .stats import compare

__version__ = "0.1.0"
