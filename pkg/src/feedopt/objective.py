"""Composite steady-state objectives and Monte Carlo smoothing oracles.

The built-in objective is the quadratic-plus-l1 cost

    Phi(u, y) = u^T M1 u + M2^T u + ||y||^2 + reg_weight * ||u||_1

split into a smooth part ``Phi1`` and a nonsmooth part ``Phi2``.  The reduced
objective eliminates ``y`` through the steady-state map of a plant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .exceptions import ConfigurationError, NonConvergenceError
from .plant import BoxConstraint, LinearPlant

__all__ = [
    "CompositeObjective",
    "ReducedObjective",
    "LipschitzConstants",
    "SmoothingSpec",
    "eval_reduced",
    "grad_smooth_part",
    "smoothed_value_oracle",
    "smoothed_grad_oracle",
    "prox_l1",
    "reference_solution",
    "prox_grad_residual",
    "estimate_lipschitz_constants",
    "sample_unit_ball",
    "sample_unit_sphere",
]


class CompositeObjective:
    """``u^T M1 u + M2^T u + ||y||^2 + reg_weight ||u||_1``.

    ``M1`` must be symmetric positive semidefinite.
    """

    def __init__(self, M1, M2, reg_weight: float = 0.0):
        M1 = np.array(M1, dtype=float, ndmin=2)
        M2 = np.array(M2, dtype=float).reshape(-1)
        p = M2.size
        if M1.shape != (p, p):
            raise ConfigurationError(f"M1 has shape {M1.shape}, expected ({p}, {p})")
        if not np.allclose(M1, M1.T, atol=1e-12 * max(1.0, np.abs(M1).max())):
            raise ConfigurationError("M1 must be symmetric")
        if np.linalg.eigvalsh(M1)[0] < -1e-10 * max(1.0, np.abs(M1).max()):
            raise ConfigurationError("M1 must be positive semidefinite")
        if reg_weight < 0:
            raise ConfigurationError("reg_weight must be nonnegative")
        self.M1 = 0.5 * (M1 + M1.T)
        self.M2 = M2
        self.reg_weight = float(reg_weight)

    @classmethod
    def from_generator(cls, M3, M2, reg_weight: float = 0.0) -> "CompositeObjective":
        M3 = np.asarray(M3, dtype=float)
        return cls(M3.T @ M3, M2, reg_weight)

    @property
    def p(self) -> int:
        return self.M2.size

    def smooth(self, u, y) -> float:
        u = np.asarray(u, dtype=float)
        y = np.asarray(y, dtype=float)
        return float(u @ self.M1 @ u + self.M2 @ u + y @ y)

    def nonsmooth(self, u) -> float:
        return self.reg_weight * float(np.abs(u).sum())

    def __call__(self, u, y) -> float:
        return self.smooth(u, y) + self.nonsmooth(u)

    evaluate = __call__

    def smooth_batch(self, U, Y) -> np.ndarray:
        U = np.atleast_2d(U)
        Y = np.atleast_2d(Y)
        return np.einsum("ij,jk,ik->i", U, self.M1, U) + U @ self.M2 + np.einsum("ij,ij->i", Y, Y)

    def evaluate_batch(self, U, Y) -> np.ndarray:
        U = np.atleast_2d(U)
        return self.smooth_batch(U, Y) + self.reg_weight * np.abs(U).sum(axis=1)

    def grad_smooth_part(self, H, u, y) -> np.ndarray:
        """Chain-rule gradient ``grad_u Phi1 + H^T grad_y Phi1`` at ``(u, y)``."""
        return 2.0 * self.M1 @ u + self.M2 + 2.0 * (np.asarray(H).T @ y)

    def to_dict(self) -> dict:
        return {"M1": self.M1.tolist(), "M2": self.M2.tolist(), "reg_weight": self.reg_weight}

    @classmethod
    def from_dict(cls, data: dict) -> "CompositeObjective":
        extra = set(data) - {"M1", "M2", "reg_weight"}
        if extra:
            raise ConfigurationError(f"unknown objective fields: {sorted(extra)}")
        return cls(data["M1"], data["M2"], data.get("reg_weight", 0.0))


def grad_smooth_part(obj: CompositeObjective, H, u, y) -> np.ndarray:
    return obj.grad_smooth_part(H, u, y)


class ReducedObjective:
    """``u -> Phi(u, h(u, d))`` for a composite objective and a linear plant.

    Evaluated in closed form through the sensitivity ``H`` and the output
    offset ``h(0, d)``; the offset is re-read from the plant on every call so
    disturbance changes are picked up.  Accepts a single input or a batch of
    row inputs.
    """

    def __init__(self, objective: CompositeObjective, plant: LinearPlant, smooth_only: bool = False):
        if plant.p != objective.p:
            raise ConfigurationError("objective and plant input dimensions differ")
        self.objective = objective
        self.plant = plant
        self.smooth_only = smooth_only
        self.H = plant.sensitivity()

    @property
    def p(self) -> int:
        return self.objective.p

    def outputs(self, U) -> np.ndarray:
        return np.atleast_2d(U) @ self.H.T + self.plant.output_offset()

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        U = np.atleast_2d(u)
        Y = self.outputs(U)
        if self.smooth_only:
            vals = self.objective.smooth_batch(U, Y)
        else:
            vals = self.objective.evaluate_batch(U, Y)
        return float(vals[0]) if u.ndim == 1 else vals

    def grad_smooth(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        U = np.atleast_2d(u)
        G = 2.0 * U @ self.objective.M1 + self.objective.M2 + 2.0 * self.outputs(U) @ self.H
        return G[0] if u.ndim == 1 else G

    def quadratic_form(self):
        """Return ``(Q, b, c)`` such that the smooth part equals ``u^T Q u + b^T u + c``."""
        g = self.plant.output_offset()
        Q = self.objective.M1 + self.H.T @ self.H
        b = self.objective.M2 + 2.0 * self.H.T @ g
        return Q, b, float(g @ g)


def eval_reduced(obj: CompositeObjective, plant: LinearPlant, u) -> float:
    return ReducedObjective(obj, plant)(u)


@dataclass(frozen=True)
class LipschitzConstants:
    M: float
    M_y: float
    M_x: float
    M_g: float

    def __post_init__(self):
        for name in ("M", "M_y", "M_x", "M_g"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class SmoothingSpec:
    delta: float
    distribution: str = "gaussian"
    sample_count: int = 100_000

    def __post_init__(self):
        if self.delta <= 0:
            raise ConfigurationError("delta must be positive")
        if self.distribution not in ("gaussian", "sphere"):
            raise ConfigurationError("distribution must be 'gaussian' or 'sphere'")
        if self.sample_count < 2:
            raise ConfigurationError("sample_count must be at least 2")


def sample_unit_sphere(rng: np.random.Generator, size: int, p: int) -> np.ndarray:
    v = rng.standard_normal((size, p))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_unit_ball(rng: np.random.Generator, size: int, p: int) -> np.ndarray:
    return sample_unit_sphere(rng, size, p) * rng.random((size, 1)) ** (1.0 / p)


_CHUNK = 20_000


def _chunks(total):
    start = 0
    while start < total:
        stop = min(total, start + _CHUNK)
        yield stop - start
        start = stop


def smoothed_value_oracle(func: Callable, spec: SmoothingSpec, w, rng: np.random.Generator):
    """Monte Carlo estimate of the smoothed value at ``w``.

    ``func`` maps a batch of inputs (rows) to values.  Gaussian smoothing
    perturbs with ``N(0, I)``; the ``"sphere"`` distribution uses the matching
    uniform-ball smoothing.  Returns ``(mean, standard_error)``.
    """
    w = np.asarray(w, dtype=float)
    p = w.size
    total = 0.0
    total_sq = 0.0
    for m in _chunks(spec.sample_count):
        if spec.distribution == "gaussian":
            v = rng.standard_normal((m, p))
        else:
            v = sample_unit_ball(rng, m, p)
        vals = np.asarray(func(w + spec.delta * v), dtype=float)
        total += vals.sum()
        total_sq += (vals ** 2).sum()
    n = spec.sample_count
    mean = total / n
    var = max(total_sq / n - mean ** 2, 0.0) * n / (n - 1)
    return float(mean), float(np.sqrt(var / n))


def smoothed_grad_oracle(func: Callable, spec: SmoothingSpec, w, rng: np.random.Generator):
    """Monte Carlo estimate of the gradient of the smoothed function at ``w``.

    Gaussian: mean of ``(v / delta) (f(w + delta v) - f(w))``.  Sphere: mean of
    ``(p v / delta) (f(w + delta v) - f(w))`` with ``v`` uniform on the unit
    sphere, which is the gradient of the ball-smoothed function.  Subtracting
    ``f(w)`` leaves the expectation unchanged because ``E[v] = 0``.
    Returns ``(mean, componentwise standard error)``.
    """
    w = np.asarray(w, dtype=float)
    p = w.size
    base = float(np.asarray(func(w[None, :]), dtype=float).reshape(-1)[0])
    s = np.zeros(p)
    s2 = np.zeros(p)
    for m in _chunks(spec.sample_count):
        if spec.distribution == "gaussian":
            v = rng.standard_normal((m, p))
            scale = 1.0 / spec.delta
        else:
            v = sample_unit_sphere(rng, m, p)
            scale = p / spec.delta
        vals = np.asarray(func(w + spec.delta * v), dtype=float) - base
        g = scale * vals[:, None] * v
        s += g.sum(axis=0)
        s2 += (g ** 2).sum(axis=0)
    n = spec.sample_count
    mean = s / n
    var = np.maximum(s2 / n - mean ** 2, 0.0) * n / (n - 1)
    return mean, np.sqrt(var / n)


def prox_l1(u, threshold: float) -> np.ndarray:
    """Soft thresholding ``sign(u) max(|u| - threshold, 0)``."""
    if threshold < 0:
        raise ConfigurationError("threshold must be nonnegative")
    u = np.asarray(u, dtype=float)
    return np.sign(u) * np.maximum(np.abs(u) - threshold, 0.0)


def _prox_box_l1(z, threshold, box):
    # prox of threshold*||.||_1 + indicator(box) is separable: soft-threshold then clip
    out = prox_l1(z, threshold)
    return out if box is None else np.clip(out, box.lower, box.upper)


def reference_solution(obj: CompositeObjective, plant: LinearPlant,
                       constraint: Optional[BoxConstraint] = None,
                       tol: float = 1e-12, max_iter: int = 1_000_000):
    """Minimize the reduced objective (optionally over a box) offline.

    Accelerated proximal gradient with adaptive restart on the closed-form
    reduced objective, stopped when the plain proximal-gradient fixed-point
    residual drops to ``tol``.  Returns ``(u_star, phi_star)``.
    """
    reduced = ReducedObjective(obj, plant)
    Q, b, c = reduced.quadratic_form()
    L = 2.0 * float(np.linalg.eigvalsh(Q)[-1])
    if L <= 0:
        L = 1.0
    step = 1.0 / L
    thr = step * obj.reg_weight
    box = constraint

    def prox_grad(u):
        return _prox_box_l1(u - step * (2.0 * Q @ u + b), thr, box)

    u = np.zeros(obj.p) if box is None else box.midpoint.copy()
    z = u.copy()
    t = 1.0
    residual = np.inf
    for _ in range(max_iter):
        u_next = prox_grad(z)
        residual = float(np.linalg.norm(u_next - prox_grad(u_next)))
        if residual <= tol:
            u = u_next
            break
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if (z - u_next) @ (u_next - u) > 0:
            # restart momentum when it points uphill
            t_next = 1.0
            z = u_next.copy()
        else:
            z = u_next + ((t - 1.0) / t_next) * (u_next - u)
        u, t = u_next, t_next
    else:
        raise NonConvergenceError(
            f"reference solution did not converge in {max_iter} iterations", residual=residual)
    return u, reduced(u)


def prox_grad_residual(obj: CompositeObjective, plant: LinearPlant, u,
                       constraint: Optional[BoxConstraint] = None) -> float:
    """Fixed-point residual ``||u - prox(u - grad/L)||`` certifying optimality."""
    Q, b, _ = ReducedObjective(obj, plant).quadratic_form()
    L = 2.0 * float(np.linalg.eigvalsh(Q)[-1])
    step = 1.0 / L
    z = _prox_box_l1(u - step * (2.0 * Q @ u + b), step * obj.reg_weight, constraint)
    return float(np.linalg.norm(u - z))


def estimate_lipschitz_constants(obj: CompositeObjective, plant: LinearPlant, rng: np.random.Generator,
                                 box: Optional[BoxConstraint] = None, center=None,
                                 radius: Optional[float] = None,
                                 n_samples: int = 10_000) -> LipschitzConstants:
    """Working-region Lipschitz estimates for the planner.

    The region is ``box`` when given, otherwise the ball of ``radius`` around
    ``center``.  ``M`` is the largest sampled gradient norm of the smooth
    reduced part plus ``reg_weight * sqrt(p)``; ``M_y`` is the largest sampled
    ``||grad_y Phi|| = 2 ||y||``.
    """
    p = obj.p
    if box is not None:
        U = box.lower + (box.upper - box.lower) * rng.random((n_samples, p))
    else:
        if center is None or radius is None:
            raise ConfigurationError("either a box or (center, radius) is required")
        U = np.asarray(center, dtype=float) + radius * sample_unit_ball(rng, n_samples, p)
    reduced = ReducedObjective(obj, plant, smooth_only=True)
    grads = reduced.grad_smooth(U)
    M = float(np.linalg.norm(grads, axis=1).max()) + obj.reg_weight * np.sqrt(p)
    M_y = float(2.0 * np.linalg.norm(reduced.outputs(U), axis=1).max())
    return LipschitzConstants(M=M, M_y=M_y, M_x=plant.lipschitz_x(), M_g=plant.lipschitz_g())
