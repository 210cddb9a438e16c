"""SGD with momentum / weight decay and the two orthogonalized variants.

``perp_renorm`` projects each group's gradient off its weight vector, rescales
the result back to the raw gradient norm and then feeds it to the ordinary
heavy-ball rule.  ``perp_plain`` does the projection only.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import IO, Sequence

import numpy as np

from .errors import ConfigurationError, NonFiniteGradientError
from .netcore import ParamGroup

VARIANTS = ("sgd", "perp_renorm", "perp_plain")


@dataclass
class OptimConfig:
    eta: float = 0.01
    momentum: float = 0.0
    weight_decay: float = 0.0
    variant: str = "sgd"
    epsilon: float = 1e-30
    orthogonalize_biases: bool = False
    min_theta_norm: float = 1e-12
    # ||g|| <= skip_tol * ||grad|| counts as the zero-projection skip case
    skip_tol: float = 1e-12

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigurationError("eta must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be >= 0")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be > 0")
        if self.min_theta_norm < 0 or self.skip_tol < 0:
            raise ConfigurationError("min_theta_norm and skip_tol must be >= 0")


@dataclass
class GradientStep:
    group_id: str
    raw_grad_norm: float
    ortho_grad_norm: float
    renorm_grad_norm: float
    inner_product: float
    theta_norm: float
    cos_alignment: float
    skipped: bool = False
    passthrough: bool = False
    step: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def orthogonalize(theta, grad, min_theta_norm: float = 0.0) -> np.ndarray:
    """Remove the component of ``grad`` along ``theta``.

    The projection is applied twice; the second pass only cleans up rounding
    left by the first.  If ``||theta|| < min_theta_norm`` (or theta is zero)
    the gradient is returned unchanged.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if theta.shape != grad.shape:
        raise ValueError("theta and grad must have the same shape")
    tt = float(np.dot(theta, theta))
    if tt == 0.0 or math.sqrt(tt) < min_theta_norm:
        return grad.copy()
    g = grad - (float(np.dot(grad, theta)) / tt) * theta
    g -= (float(np.dot(g, theta)) / tt) * theta
    return g


def renormalize(g, raw_grad_norm: float, epsilon: float = 1e-30) -> np.ndarray:
    """Rescale ``g`` to (almost) the raw gradient norm: ``raw / (||g|| + eps) * g``.

    A zero ``g`` comes back as zeros; callers treat that as a skipped update.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    g = np.asarray(g, dtype=np.float64)
    gn = float(np.linalg.norm(g))
    if gn == 0.0:
        return np.zeros_like(g)
    return (raw_grad_norm / (gn + epsilon)) * g


def _cos(inner: float, a: float, b: float) -> float:
    if a == 0.0 or b == 0.0:
        return 0.0
    return inner / (a * b)


class Optimizer:
    """Layer-wise optimizer state for one run.

    ``step`` takes groups with populated gradients and returns updated groups
    plus one :class:`GradientStep` per group.
    """

    def __init__(self, config: OptimConfig, trace: IO[str] | None = None):
        self.config = config
        self.buffers: dict[str, np.ndarray] = {}
        self.n_steps = 0
        self.trace = trace

    def _direction(self, grp: ParamGroup) -> tuple[np.ndarray | None, GradientStep]:
        cfg = self.config
        theta, grad = grp.theta, grp.grad
        raw = float(np.linalg.norm(grad))
        tn = float(np.linalg.norm(theta))
        inner = float(np.dot(grad, theta))
        diag = GradientStep(
            group_id=grp.group_id,
            raw_grad_norm=raw,
            ortho_grad_norm=raw,
            renorm_grad_norm=raw,
            inner_product=inner,
            theta_norm=tn,
            cos_alignment=_cos(inner, raw, tn),
            step=self.n_steps,
        )
        bypass = grp.ndim == 1 and not cfg.orthogonalize_biases
        if cfg.variant == "sgd" or bypass:
            return grad, diag
        if tn < cfg.min_theta_norm or tn == 0.0:
            diag.passthrough = True
            return grad, diag
        g = orthogonalize(theta, grad)
        gn = float(np.linalg.norm(g))
        diag.ortho_grad_norm = gn
        if cfg.variant == "perp_plain":
            diag.renorm_grad_norm = gn
            return g, diag
        if gn == 0.0 or gn <= cfg.skip_tol * raw:
            diag.skipped = True
            diag.renorm_grad_norm = 0.0
            return None, diag
        g_hat = renormalize(g, raw, cfg.epsilon)
        diag.renorm_grad_norm = float(np.linalg.norm(g_hat))
        return g_hat, diag

    def step(self, groups: Sequence[ParamGroup]) -> tuple[list[ParamGroup], list[GradientStep]]:
        cfg = self.config
        for grp in groups:
            if not np.all(np.isfinite(grp.grad)):
                dump = {
                    g.group_id: {
                        "grad_nonfinite": int((~np.isfinite(g.grad)).sum()),
                        "theta_norm": float(np.linalg.norm(g.theta)),
                    }
                    for g in groups
                }
                raise NonFiniteGradientError(
                    f"non-finite gradient in group {grp.group_id} at step {self.n_steps}",
                    {"step": self.n_steps, "groups": dump},
                )
        out: list[ParamGroup] = []
        diags: list[GradientStep] = []
        for grp in groups:
            direction, diag = self._direction(grp)
            diags.append(diag)
            if direction is None:
                out.append(ParamGroup(grp.group_id, grp.theta.copy(), grp.grad.copy(), grp.shape))
                continue
            d = direction + cfg.weight_decay * grp.theta if cfg.weight_decay else direction
            if cfg.momentum:
                buf = self.buffers.get(grp.group_id)
                if buf is None:
                    buf = d.copy()
                else:
                    buf = cfg.momentum * buf + d
                self.buffers[grp.group_id] = buf
                d = buf
            theta = grp.theta - cfg.eta * d
            out.append(ParamGroup(grp.group_id, theta, grp.grad.copy(), grp.shape))
        if self.trace is not None:
            for diag in diags:
                self.trace.write(diag.to_json() + "\n")
        self.n_steps += 1
        return out, diags


def step(optimizer: Optimizer, groups: Sequence[ParamGroup]):
    return optimizer.step(groups)


@dataclass
class RunLog:
    """Per-epoch history of one training run (entry 0 is the initial state)."""

    theta_norms: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    skipped_steps: int = 0
    passthrough_steps: int = 0


def trajectory_norms(run_log: RunLog) -> np.ndarray:
    return np.asarray(run_log.theta_norms, dtype=np.float64)
