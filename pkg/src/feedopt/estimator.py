"""Zeroth-order gradient estimators.

The residual one-point estimators reuse the previous objective evaluation, so
each controller iteration needs exactly one new measurement.  The cache holds
that previous evaluation and the direction it was taken with.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .exceptions import BootstrapError, ConfigurationError, ContractViolation

__all__ = [
    "EstimatorCache",
    "GradientEstimate",
    "CancellationWarning",
    "sample_direction",
    "residual_estimate_gaussian",
    "residual_estimate_sphere",
    "two_point_estimate",
]

_EPS = np.finfo(float).eps


class CancellationWarning(RuntimeWarning):
    """Evaluation difference is at the level of floating-point roundoff."""


@dataclass
class EstimatorCache:
    prev_eval: float = 0.0
    prev_direction: Optional[np.ndarray] = None
    initialized: bool = False

    def store(self, value: float, direction) -> None:
        self.prev_eval = float(value)
        self.prev_direction = np.array(direction, dtype=float)
        self.initialized = True


@dataclass(frozen=True)
class GradientEstimate:
    phi_tilde: np.ndarray
    direction_used: np.ndarray
    fresh_eval: float


def sample_direction(distribution: str, p: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``N(0, I_p)`` (``"gaussian"``) or a uniform unit vector (``"sphere"``)."""
    if p < 1:
        raise ConfigurationError("p must be at least 1")
    v = rng.standard_normal(p)
    if distribution == "gaussian":
        return v
    if distribution == "sphere":
        return v / np.linalg.norm(v)
    raise ConfigurationError(f"unknown distribution {distribution!r}")


def _check_cancellation(current, previous):
    diff = abs(current - previous)
    if diff != 0.0 and diff < 1e3 * _EPS * abs(current):
        warnings.warn("evaluation difference is dominated by roundoff; consider a larger delta",
                      CancellationWarning, stacklevel=3)


def _residual(cache, delta, v, current_eval, scale):
    if not cache.initialized:
        raise BootstrapError("estimator cache is empty; run the priming step first")
    if delta <= 0:
        raise ConfigurationError("delta must be positive")
    _check_cancellation(current_eval, cache.prev_eval)
    v = np.asarray(v, dtype=float)
    phi = (scale / delta) * (current_eval - cache.prev_eval) * v
    cache.store(current_eval, v)
    return GradientEstimate(phi_tilde=phi, direction_used=v, fresh_eval=float(current_eval))


def residual_estimate_gaussian(cache: EstimatorCache, delta: float, v, current_eval: float) -> GradientEstimate:
    """``(v / delta) (current_eval - cache.prev_eval)``; updates ``cache`` in place."""
    return _residual(cache, delta, v, current_eval, 1.0)


def residual_estimate_sphere(cache: EstimatorCache, delta: float, p: int, v, current_eval: float) -> GradientEstimate:
    """``(p v / delta) (current_eval - cache.prev_eval)`` for a unit ``v``; updates ``cache``."""
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise ContractViolation("sphere direction must have unit norm")
    if v.size != p:
        raise ContractViolation("direction length does not match p")
    return _residual(cache, delta, v, current_eval, float(p))


def two_point_estimate(func: Callable, w, delta: float, v, distribution: str = "gaussian") -> np.ndarray:
    """Forward-difference two-point estimate, for variance comparisons only."""
    if delta <= 0:
        raise ConfigurationError("delta must be positive")
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    scale = 1.0 if distribution == "gaussian" else float(w.size)
    return (scale / delta) * (func(w + delta * v) - func(w)) * v
