"""Discrete-time plants, steady-state maps and Lyapunov certificates.

The linear plant is

    x_{k+1} = A x_k + B u_k + E d
    y_k     = C x_k + D d

with a disturbance ``d`` that is stored on the plant but never exposed to a
controller.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .exceptions import CertificateError, ConfigurationError, StabilityError

__all__ = [
    "PlantDims",
    "PlantState",
    "LinearPlant",
    "NonlinearPlant",
    "SaturatedPlant",
    "LyapunovCertificate",
    "BoxConstraint",
    "spectral_radius_power",
    "random_linear_plant",
    "perturb_sensitivity",
    "lyapunov_certificate",
    "lyapunov_value",
    "saturate",
]


@dataclass(frozen=True)
class PlantDims:
    n: int
    p: int
    q: int
    r: int

    def __post_init__(self):
        for name in ("n", "p", "q", "r"):
            value = getattr(self, name)
            if int(value) != value or value <= 0:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")


@dataclass(frozen=True)
class PlantState:
    x: np.ndarray
    k: int = 0


@dataclass(frozen=True)
class BoxConstraint:
    """Componentwise box ``lower <= u <= upper``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ConfigurationError("box bounds must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ConfigurationError("box bounds must be finite")
        if np.any(lower > upper):
            raise ConfigurationError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, u, tol: float = 0.0) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))

    def project(self, u) -> np.ndarray:
        return np.clip(u, self.lower, self.upper)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "BoxConstraint":
        return cls(np.asarray(data["lower"], dtype=float), np.asarray(data["upper"], dtype=float))


def saturate(u, box: BoxConstraint) -> np.ndarray:
    """Clamp ``u`` componentwise into ``box``."""
    return np.clip(np.asarray(u, dtype=float), box.lower, box.upper)


def _as_matrix(name, value, shape):
    arr = np.array(value, dtype=float, ndmin=2)
    if arr.shape != shape:
        raise ConfigurationError(f"{name} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} contains non-finite entries")
    return arr


def _as_vector(name, value, size):
    arr = np.array(value, dtype=float).reshape(-1)
    if arr.size != size:
        raise ConfigurationError(f"{name} has length {arr.size}, expected {size}")
    return arr


class LinearPlant:
    """Linear time-invariant plant with a constant, mutable disturbance.

    Parameters
    ----------
    A : (n, n) array
        State matrix; its spectral radius must be below one.
    B : (n, p) array
        Input matrix.
    C : (q, n) array
        Output matrix.
    D : (q, r) array
        Disturbance feedthrough to the output.
    E : (n, r) array
        Disturbance channel into the state.
    d : (r,) array, optional
        Current disturbance; zero by default.
    """

    def __init__(self, A, B, C, D, E, d=None):
        A = np.array(A, dtype=float, ndmin=2)
        n = A.shape[0]
        B = np.array(B, dtype=float, ndmin=2)
        C = np.array(C, dtype=float, ndmin=2)
        D = np.array(D, dtype=float, ndmin=2)
        p = B.shape[1]
        q = C.shape[0]
        r = D.shape[1]
        self.dims = PlantDims(n, p, q, r)
        self.A = _as_matrix("A", A, (n, n))
        self.B = _as_matrix("B", B, (n, p))
        self.C = _as_matrix("C", C, (q, n))
        self.D = _as_matrix("D", D, (q, r))
        self.E = _as_matrix("E", E, (n, r))
        self.d = np.zeros(r) if d is None else _as_vector("d", d, r)

        radius = float(np.max(np.abs(np.linalg.eigvals(self.A))))
        if radius >= 1.0:
            raise StabilityError(f"spectral radius of A is {radius:.6g} >= 1")
        self.spectral_radius = radius
        eye = np.eye(n)
        if np.linalg.cond(eye - self.A) > 1e12:
            raise StabilityError("I - A is numerically singular")
        self._lu = linalg.lu_factor(eye - self.A)
        # static gains of the steady-state map
        self._x_gain_u = linalg.lu_solve(self._lu, self.B)
        self._x_gain_d = linalg.lu_solve(self._lu, self.E)

    # -- properties -----------------------------------------------------
    @property
    def n(self):
        return self.dims.n

    @property
    def p(self):
        return self.dims.p

    @property
    def q(self):
        return self.dims.q

    @property
    def r(self):
        return self.dims.r

    def set_disturbance(self, d) -> None:
        self.d = _as_vector("d", d, self.r)

    def copy(self) -> "LinearPlant":
        return copy.deepcopy(self)

    # -- dynamics -------------------------------------------------------
    def initial_state(self, x0=None) -> PlantState:
        x = np.zeros(self.n) if x0 is None else _as_vector("x0", x0, self.n)
        return PlantState(x=x, k=0)

    def transition(self, x, u) -> np.ndarray:
        """Evaluate ``f(x, u, d)`` without bookkeeping."""
        return self.A @ x + self.B @ u + self.E @ self.d

    def output(self, x) -> np.ndarray:
        return self.C @ x + self.D @ self.d

    def step(self, state: PlantState, u):
        """Advance one step; return the new state and the output measured at it."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.p,):
            raise ConfigurationError(f"input has shape {u.shape}, expected ({self.p},)")
        if state.x.shape != (self.n,):
            raise ConfigurationError(f"state has shape {state.x.shape}, expected ({self.n},)")
        x_next = self.transition(state.x, u)
        return PlantState(x=x_next, k=state.k + 1), self.output(x_next)

    def steady_state(self, u):
        """Return ``(x_ss, y_ss)`` for a constant input ``u``."""
        u = np.asarray(u, dtype=float)
        x_ss = self._x_gain_u @ u + self._x_gain_d @ self.d
        return x_ss, self.output(x_ss)

    def steady_state_batch(self, U) -> np.ndarray:
        """Steady-state outputs for each row of ``U``; shape ``(m, q)``."""
        U = np.atleast_2d(U)
        return U @ self.sensitivity().T + self.output_offset()

    def sensitivity(self) -> np.ndarray:
        """Steady-state input-output sensitivity ``C (I - A)^{-1} B``."""
        return self.C @ self._x_gain_u

    def disturbance_gain(self) -> np.ndarray:
        """``C (I - A)^{-1} E + D``, the steady-state map from ``d`` to ``y``."""
        return self.C @ self._x_gain_d + self.D

    def output_offset(self) -> np.ndarray:
        """Steady-state output at ``u = 0`` for the current disturbance."""
        return self.disturbance_gain() @ self.d

    # -- Lipschitz constants -------------------------------------------
    def lipschitz_x(self) -> float:
        """Operator norm of ``(I - A)^{-1} B`` (Lipschitz constant of ``x_ss`` in ``u``)."""
        return float(np.linalg.norm(self._x_gain_u, 2))

    def lipschitz_g(self) -> float:
        """Operator norm of ``C`` (Lipschitz constant of the output map in ``x``)."""
        return float(np.linalg.norm(self.C, 2))

    # -- serialization --------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "D": self.D.tolist(),
            "E": self.E.tolist(),
            "d": self.d.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LinearPlant":
        missing = {"A", "B", "C", "D", "E"} - set(data)
        if missing:
            raise ConfigurationError(f"plant document lacks fields: {sorted(missing)}")
        extra = set(data) - {"A", "B", "C", "D", "E", "d"}
        if extra:
            raise ConfigurationError(f"unknown plant fields: {sorted(extra)}")
        return cls(data["A"], data["B"], data["C"], data["D"], data["E"], data.get("d"))


class NonlinearPlant:
    """Plant defined by user callables ``f(x, u, d)``, ``g(x, d)`` and ``x_ss(u, d)``.

    No certificate is derived for such plants; supply constants to the
    analysis routines directly.
    """

    def __init__(self, f: Callable, g: Callable, x_ss: Callable, dims: PlantDims, d=None):
        self.f = f
        self.g = g
        self.x_ss = x_ss
        self.dims = dims
        self.d = np.zeros(dims.r) if d is None else _as_vector("d", d, dims.r)

    @property
    def p(self):
        return self.dims.p

    @property
    def n(self):
        return self.dims.n

    def set_disturbance(self, d) -> None:
        self.d = _as_vector("d", d, self.dims.r)

    def copy(self):
        return copy.copy(self)

    def initial_state(self, x0=None) -> PlantState:
        x = np.zeros(self.dims.n) if x0 is None else _as_vector("x0", x0, self.dims.n)
        return PlantState(x=x, k=0)

    def transition(self, x, u):
        return np.asarray(self.f(x, u, self.d), dtype=float)

    def output(self, x):
        return np.asarray(self.g(x, self.d), dtype=float)

    def step(self, state: PlantState, u):
        x_next = self.transition(state.x, np.asarray(u, dtype=float))
        return PlantState(x=x_next, k=state.k + 1), self.output(x_next)

    def steady_state(self, u):
        x_ss = np.asarray(self.x_ss(np.asarray(u, dtype=float), self.d), dtype=float)
        return x_ss, self.output(x_ss)


class SaturatedPlant:
    """Wrap a plant so that every applied input is clamped into a box first."""

    def __init__(self, plant, box: BoxConstraint):
        if box.dim != plant.p:
            raise ConfigurationError("box dimension does not match plant input dimension")
        self.plant = plant
        self.box = box
        self.last_applied: Optional[np.ndarray] = None

    def __getattr__(self, name):
        return getattr(self.plant, name)

    def copy(self):
        return SaturatedPlant(self.plant.copy(), self.box)

    def transition(self, x, u):
        return self.plant.transition(x, saturate(u, self.box))

    def step(self, state, u):
        self.last_applied = saturate(u, self.box)
        return self.plant.step(state, self.last_applied)

    def steady_state(self, u):
        return self.plant.steady_state(saturate(u, self.box))


def spectral_radius_power(A, max_iter: int = 500, rtol: float = 1e-12, seed: int = 0) -> float:
    """Estimate the spectral radius of ``A`` by power iteration.

    Falls back to a dense eigenvalue computation when the iteration does not
    settle (e.g. a complex-conjugate dominant pair).
    """
    A = np.asarray(A, dtype=float)
    v = np.random.default_rng(seed).random(A.shape[0]) + 1.0
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(max_iter):
        w = A @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        if abs(norm - estimate) <= rtol * norm:
            return float(norm)
        estimate = norm
        v = w / norm
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def random_linear_plant(dims: PlantDims, rng: np.random.Generator, spectral_radius: float = 0.05) -> LinearPlant:
    """Draw all matrices U(0, 1), rescale ``A`` to ``spectral_radius`` and draw ``d ~ N(0, I)``."""
    n, p, q, r = dims.n, dims.p, dims.q, dims.r
    A = rng.random((n, n))
    B = rng.random((n, p))
    C = rng.random((q, n))
    D = rng.random((q, r))
    E = rng.random((n, r))
    A *= spectral_radius / spectral_radius_power(A)
    d = rng.standard_normal(r)
    return LinearPlant(A, B, C, D, E, d)


def perturb_sensitivity(H, relative_bound: float, rng: np.random.Generator) -> np.ndarray:
    """Multiply every entry of ``H`` by ``1 + eps`` with ``eps ~ U(-bound, bound)``."""
    if relative_bound < 0:
        raise ConfigurationError("relative_bound must be nonnegative")
    H = np.asarray(H, dtype=float)
    eps = rng.uniform(-relative_bound, relative_bound, size=H.shape)
    return H * (1.0 + eps)


@dataclass(frozen=True)
class LyapunovCertificate:
    """Quadratic Lyapunov function ``V = (x - x_ss)^T P (x - x_ss)`` and its constants."""

    P: np.ndarray
    alpha1: float
    alpha2: float
    alpha3: float
    mu: float

    def value(self, plant, x, u) -> float:
        return lyapunov_value(self, plant, x, u)


def lyapunov_certificate(plant: LinearPlant, Q=None) -> LyapunovCertificate:
    """Solve ``A^T P A - P = -Q`` and derive the sandwich/decrement constants.

    ``Q`` defaults to the identity.
    """
    from .analysis import rate_mu

    n = plant.n
    Q = np.eye(n) if Q is None else np.asarray(Q, dtype=float)
    if Q.shape != (n, n) or not np.allclose(Q, Q.T):
        raise ConfigurationError("Q must be a symmetric n x n matrix")
    q_eigs = np.linalg.eigvalsh(Q)
    if q_eigs[0] <= 0:
        raise CertificateError("Q must be positive definite")
    try:
        P = linalg.solve_discrete_lyapunov(plant.A.T, Q)
    except (linalg.LinAlgError, ValueError) as exc:
        raise CertificateError(f"Lyapunov solve failed: {exc}") from exc
    P = 0.5 * (P + P.T)
    residual = np.linalg.norm(plant.A.T @ P @ plant.A - P + Q)
    if residual > 1e-8 * max(1.0, np.linalg.norm(Q)):
        raise CertificateError(f"Lyapunov residual {residual:.3g} too large")
    p_eigs = np.linalg.eigvalsh(P)
    alpha1, alpha2, alpha3 = float(p_eigs[0]), float(p_eigs[-1]), float(q_eigs[0])
    if alpha1 <= 0:
        raise CertificateError("P is not positive definite")
    if alpha3 > alpha2:
        raise CertificateError("alpha3 > alpha2; choose a different Q")
    return LyapunovCertificate(P=P, alpha1=alpha1, alpha2=alpha2, alpha3=alpha3,
                               mu=rate_mu(alpha1, alpha2, alpha3))


def lyapunov_value(cert: LyapunovCertificate, plant, x, u) -> float:
    e = np.asarray(x, dtype=float) - plant.steady_state(u)[0]
    return float(e @ cert.P @ e)
