"""Synthetic input corruptions with five severity levels.

Severity ``s`` maps linearly onto each operator's strength; ``s = 0`` is the
identity.  Strengths are expressed relative to a value range ``(lo, hi)``,
and outputs are clipped back into it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d

from .errors import ConfigurationError

OPERATORS = ("gaussian_noise", "impulse_noise", "contrast_reduce", "box_blur")


@dataclass(frozen=True)
class CorruptionSpec:
    operator: str
    severity: int

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise ConfigurationError(f"unknown corruption {self.operator!r}")
        if not 0 <= int(self.severity) <= 5:
            raise ConfigurationError("severity must lie in 1..5 (0 is the identity)")


def gaussian_sigma(s: int) -> float:
    return 0.04 * s


def impulse_fraction(s: int) -> float:
    return 0.02 * s


def contrast_weight(s: int) -> float:
    return 0.15 * s


def blur_width(s: int) -> int:
    return 2 * s + 1


def resolve_range(x: np.ndarray, value_range=None) -> tuple[float, float]:
    """Explicit range, else the batch's own min/max; a flat batch gets unit width."""
    if value_range is not None:
        lo, hi = float(value_range[0]), float(value_range[1])
    else:
        lo, hi = float(x.min()), float(x.max())
    if hi < lo:
        raise ConfigurationError("value_range must satisfy lo <= hi")
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def corrupt(x, spec: CorruptionSpec, rng: np.random.Generator, value_range=None,
            grid: tuple[int, ...] | None = None, clip: bool = True) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    s = int(spec.severity)
    if spec.operator == "box_blur" and grid is None:
        raise ConfigurationError("box_blur needs grid-structured features")
    if s == 0:
        return x.copy()
    lo, hi = resolve_range(x, value_range)
    width = hi - lo
    if spec.operator == "gaussian_noise":
        out = x + gaussian_sigma(s) * width * rng.standard_normal(x.shape)
    elif spec.operator == "impulse_noise":
        out = x.copy()
        flat = out.reshape(-1)
        k = int(round(impulse_fraction(s) * flat.size))
        pos = rng.choice(flat.size, size=k, replace=False)
        flat[pos] = np.where(rng.random(k) < 0.5, lo, hi)
    elif spec.operator == "contrast_reduce":
        w = contrast_weight(s)
        mean = x.mean(axis=-1, keepdims=True)
        out = (1.0 - w) * x + w * mean
    else:
        if int(np.prod(grid)) != x.shape[-1]:
            raise ConfigurationError(f"grid {grid} does not match {x.shape[-1]} features")
        img = x.reshape(x.shape[:-1] + tuple(grid))
        out = uniform_filter1d(img, size=blur_width(s), axis=-1, mode="nearest").reshape(x.shape)
    if clip:
        out = np.clip(out, lo, hi)
    return out


def perturbation_magnitude(x: np.ndarray, xc: np.ndarray) -> float:
    """Mean absolute change per feature."""
    return float(np.abs(np.asarray(xc) - np.asarray(x)).mean())
