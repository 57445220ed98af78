"""Theory-side computations.

Rate constant of the plant, step-size planning for the unconstrained and the
Frank-Wolfe controller, the Frank-Wolfe gap, the evaluation-error bound, the
partial-sum bound for coupled nonnegative sequences, and per-step convergence
metrics of a closed-loop trajectory.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .controller import lmo_box
from .exceptions import (AssumptionViolation, ConfigurationError, ContractViolation,
                         EmptyFeasibleRange)
from .objective import ReducedObjective, SmoothingSpec, smoothed_grad_oracle
from .plant import BoxConstraint, PlantState

__all__ = [
    "rate_mu",
    "PlannerInput",
    "StepPlan",
    "ConstrainedPlan",
    "plan_unconstrained",
    "plan_constrained",
    "rho_closed_form",
    "unconstrained_bound",
    "constrained_bound",
    "constrained_bound_simplified",
    "fw_gap",
    "evaluation_error",
    "CoupledSequenceSpec",
    "coupled_sum_bound",
    "check_coupled_sequences",
    "simulate_coupled_sequences",
    "convergence_metrics",
]


def rate_mu(alpha1: float, alpha2: float, alpha3: float) -> float:
    """``(2 alpha2 / alpha1) (1 - alpha3 / alpha2)``."""
    if min(alpha1, alpha2, alpha3) <= 0:
        raise ValueError("alphas must be positive")
    if alpha3 > alpha2:
        raise ValueError("alpha3 must not exceed alpha2")
    return (2.0 * alpha2 / alpha1) * (1.0 - alpha3 / alpha2)


@dataclass(frozen=True)
class PlannerInput:
    M: float
    M_x: float
    M_g: float
    M_y: float
    alpha1: float
    alpha2: float
    alpha3: float
    p: int
    T: int
    epsilon: float

    def __post_init__(self):
        for name in ("M", "alpha1", "alpha2", "alpha3", "epsilon"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("M_x", "M_g", "M_y"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        if self.p < 1 or self.T < 1:
            raise ConfigurationError("p and T must be positive integers")

    @property
    def mu(self) -> float:
        return rate_mu(self.alpha1, self.alpha2, self.alpha3)

    @property
    def _decay(self) -> float:
        # (1 - alpha3/alpha2), the factor shared by most coefficients
        return 1.0 - self.alpha3 / self.alpha2


@dataclass(frozen=True)
class StepPlan:
    delta: float
    eta: float
    eta_max: float
    kappa: float
    kappa_star: float
    rho: float
    c11: float
    c12: float
    c21: float
    c22: float
    d1: float
    d2: float
    zeta1: float
    zeta2: float
    zeta3: float
    L: float
    feasible: bool

    @property
    def coefficient_matrix(self) -> np.ndarray:
        return np.array([[self.c11, self.c12], [self.c21, self.c22]])

    @property
    def symmetrized_matrix(self) -> np.ndarray:
        off = math.sqrt(self.c12 * self.c21)
        return np.array([[self.c11, off], [off, self.c22]])

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def zetas(inp: PlannerInput):
    """Feasibility coefficients ``(zeta1, zeta2, zeta3)`` of the step-size condition."""
    M, Mx, Mg, My = inp.M, inp.M_x, inp.M_g, inp.M_y
    a1, a2 = inp.alpha1, inp.alpha2
    p, T, eps = inp.p, inp.T, inp.epsilon
    dec = inp._decay
    zeta1 = (6.0 * M ** 2 / (p ** 2 * T * eps)) * (M ** 2 * p + 2.0 * My ** 2 * Mg ** 2 * Mx ** 2 * (p + 4) * (a2 / a1) * dec)
    zeta2 = math.sqrt((12.0 * a2 * M ** 2 * Mx ** 2 * My ** 2 * Mg ** 2 / (a1 * p ** 2 * T * eps)) * dec
                      * (p + (p + 4) * (2.0 * a2 / a1) * dec))
    zeta3 = (2.0 * a2 / a1) * dec
    return zeta1, zeta2, zeta3


def kappa_upper(zeta1: float, zeta2: float, zeta3: float) -> float:
    """Largest ``kappa`` with ``zeta1 k^2 + zeta2 k <= 1`` and ``zeta3 + zeta2 k <= 1``."""
    if zeta3 >= 1:
        raise EmptyFeasibleRange(f"empty feasible range: zeta3 = {zeta3:.6g} >= 1")
    if zeta1 > 0:
        # numerically stable form of (-z2 + sqrt(z2^2 + 4 z1)) / (2 z1)
        root = 2.0 / (zeta2 + math.sqrt(zeta2 ** 2 + 4.0 * zeta1))
    elif zeta2 > 0:
        root = 1.0 / zeta2
    else:
        root = math.inf
    second = (1.0 - zeta3) / zeta2 if zeta2 > 0 else math.inf
    return min(root, second)


def coefficients(inp: PlannerInput, delta: float, eta: float):
    """Entries ``c11, c12, c21, c22, d1, d2`` of the coupled second-moment/Lyapunov recursion."""
    M, Mx, Mg, My = inp.M, inp.M_x, inp.M_g, inp.M_y
    a1, a2, p = inp.alpha1, inp.alpha2, inp.p
    dec = inp._decay
    c11 = (6.0 * eta ** 2 / delta ** 2) * (M ** 2 * p + 2.0 * My ** 2 * Mg ** 2 * Mx ** 2 * (p + 4) * (a2 / a1) * dec)
    c12 = (3.0 * My ** 2 * Mg ** 2 / (a1 * delta ** 2)) * dec * (p + (p + 4) * (2.0 * a2 / a1) * dec)
    c21 = 4.0 * a2 * eta ** 2 * Mx ** 2
    c22 = (2.0 * a2 / a1) * dec
    d1 = 24.0 * M ** 2 * (p + 4) ** 2 + 24.0 * My ** 2 * Mg ** 2 * Mx ** 2 * p * (p + 4) * (a2 / a1) * dec
    d2 = 8.0 * a2 * p * delta ** 2 * Mx ** 2
    return c11, c12, c21, c22, d1, d2


def rho_closed_form(c11: float, c12: float, c21: float, c22: float) -> float:
    """Perron eigenvalue of the symmetrized 2x2 matrix with off-diagonal ``sqrt(c12 c21)``."""
    half_sum = 0.5 * (c11 + c22)
    half_diff = 0.5 * (c11 - c22)
    return half_sum + math.sqrt(half_diff ** 2 + c12 * c21)


def plan_unconstrained(inp: PlannerInput, kappa: Optional[float] = None,
                       kappa_fraction: float = 0.5) -> StepPlan:
    """Smoothing radius and step size for the unconstrained controller.

    ``delta = eps / (M sqrt(p))`` and ``eta = kappa sqrt(eps) / (p^{3/2} sqrt(T))``
    with ``kappa = kappa_fraction * kappa_star`` unless ``kappa`` is given.
    """
    mu = inp.mu
    if mu >= 1:
        raise AssumptionViolation(
            f"assumption violated: mu >= 1 (mu = {mu:.6g}); empty feasible range: zeta3 >= 1")
    z1, z2, z3 = zetas(inp)
    k_star = kappa_upper(z1, z2, z3)
    if kappa is None:
        if not math.isfinite(k_star):
            raise EmptyFeasibleRange("kappa* is unbounded; supply kappa explicitly")
        kappa = kappa_fraction * k_star
    if kappa <= 0:
        raise ConfigurationError("kappa must be positive")
    p, T, eps = inp.p, inp.T, inp.epsilon
    scale = math.sqrt(eps) / (p ** 1.5 * math.sqrt(T))
    delta = eps / (inp.M * math.sqrt(p))
    eta = kappa * scale
    c11, c12, c21, c22, d1, d2 = coefficients(inp, delta, eta)
    rho = float(rho_closed_form(c11, c12, c21, c22))
    return StepPlan(delta=delta, eta=eta, eta_max=k_star * scale, kappa=kappa, kappa_star=k_star,
                    rho=rho, c11=c11, c12=c12, c21=c21, c22=c22, d1=d1, d2=d2,
                    zeta1=z1, zeta2=z2, zeta3=z3, L=inp.M * math.sqrt(p) / delta,
                    feasible=bool(rho < 1))


def unconstrained_bound(plan: StepPlan, inp: PlannerInput, initial_gap: float, B0: float) -> float:
    """Explicit finite-``T`` bound on the average squared smoothed-gradient norm.

    ``initial_gap`` estimates ``E[Phi_delta(w0)] - Phi_delta^*`` and ``B0`` the
    initial second moment plus the weighted initial Lyapunov value.
    """
    if not plan.feasible:
        raise AssumptionViolation("plan is infeasible (rho >= 1)")
    T, rho = inp.T, plan.rho
    ratio = math.sqrt(plan.c12 / plan.c21)
    factor = (plan.eta * inp.M * math.sqrt(inp.p) / plan.delta
              + inp.p * inp.M_y ** 2 * inp.M_g ** 2 / (plan.delta ** 2 * inp.alpha1) / ratio * inp._decay)
    partial = ((rho ** (T - 1) + 1.0 / (1.0 - rho)) * B0
               + (T - 1) / (1.0 - rho) * (plan.d1 + ratio * plan.d2))
    return 2.0 / (plan.eta * T) * initial_gap + factor / T * partial


@dataclass(frozen=True)
class ConstrainedPlan:
    delta: float
    eta: float
    kappa: float
    kappa_limit: float
    D: float


def plan_constrained(inp: PlannerInput, D: float, kappa: Optional[float] = None) -> ConstrainedPlan:
    """``delta = eps / M`` and ``eta = kappa sqrt(eps / (p T))``, with ``eta < 1``.

    An explicit ``kappa`` outside ``(0, sqrt(p T / eps))`` is rejected; the
    default ``kappa = 1`` is halved toward the limit when it would give
    ``eta >= 1``.
    """
    if inp.mu >= 1:
        raise AssumptionViolation(f"assumption violated: mu >= 1 (mu = {inp.mu:.6g})")
    if D <= 0:
        raise ConfigurationError("diameter D must be positive")
    p, T, eps = inp.p, inp.T, inp.epsilon
    limit = math.sqrt(p * T / eps)
    if kappa is None:
        kappa = 1.0 if 1.0 < limit else 0.5 * limit
    if not 0 < kappa < limit:
        raise ConfigurationError(f"kappa must lie in (0, {limit:.6g}) so that eta < 1")
    eta = kappa * math.sqrt(eps / (p * T))
    if eta >= 1:
        raise ConfigurationError("eta >= 1; step size cannot be clamped below one")
    return ConstrainedPlan(delta=eps / inp.M, eta=eta, kappa=kappa, kappa_limit=limit, D=D)


def constrained_bound(inp: PlannerInput, D: float, kappa: float, initial_gap: float, V0: float) -> float:
    """Bound on the average expected Frank-Wolfe gap over ``T`` iterations.

    ``initial_gap`` estimates ``E[Phi_delta(w1)] - Phi_delta^*``, ``V0`` the
    initial Lyapunov value.
    """
    M, Mx, Mg, My = inp.M, inp.M_x, inp.M_g, inp.M_y
    a2, p, T, eps = inp.alpha2, inp.p, inp.T, inp.epsilon
    mu = inp.mu
    if mu >= 1:
        raise AssumptionViolation(f"assumption violated: mu >= 1 (mu = {mu:.6g})")
    root = math.sqrt(p / (eps * T))
    first = (initial_gap / kappa + D ** 2 * M ** 2 * kappa / 2.0) * root
    drift = 2.0 * kappa ** 2 * D ** 2 * eps / (p * T) + 8.0 / M ** 2 * eps ** 2
    bracket = ((1.0 + mu) / ((1.0 - mu) * T) * (V0 + 2.0 * (T - 1) * a2 * Mx ** 2 * drift)
               + 2.0 * a2 * Mx ** 2 * drift)
    inner = (6.0 * M ** 4 * D ** 2 * kappa ** 2 * p / (eps * T) + 24.0 * M ** 2 * p ** 2
             + mu * My ** 2 * Mg ** 2 / (2.0 * a2) * bracket)
    return first + D * math.sqrt(inner)


def constrained_bound_simplified(C1: float, C2: float, D: float, M: float, p: int,
                                 epsilon: float, T: float) -> float:
    """Fast-decaying-plant form ``C1 sqrt(p/(eps T)) + D (C2 p/(eps T) + 24 M^2 p^2)^{1/2}``."""
    ratio = p / (epsilon * T)
    return C1 * math.sqrt(ratio) + D * math.sqrt(C2 * ratio + 24.0 * M ** 2 * p ** 2)


def fw_gap(grad, w, box: BoxConstraint) -> float:
    """``max_{z in box} <z - w, -grad>``, evaluated at the box LMO vertex."""
    w = np.asarray(w, dtype=float)
    if not box.contains(w):
        raise ContractViolation("fw_gap requires w inside the box")
    grad = np.asarray(grad, dtype=float)
    s = lmo_box(grad, box)
    return float((w - s) @ grad)


def evaluation_error(plant, cert, objective, x, u, M_y: Optional[float] = None,
                     M_g: Optional[float] = None):
    """Return ``(e_phi, bound)`` for one plant step from ``x`` under input ``u``.

    ``e_phi = Phi(u, y_next) - Phi(u, h(u, d))``.  The bound is
    ``sqrt(mu M_y^2 M_g^2 V / (2 alpha2))``.  When ``M_y`` is omitted, the
    secant constant ``2 max(||y_next||, ||h||)`` of the ``||y||^2`` term is used,
    which is valid for the built-in composite objective.
    """
    u = np.asarray(u, dtype=float)
    _, y_next = plant.step(PlantState(np.asarray(x, dtype=float)), u)
    _, y_ss = plant.steady_state(u)
    e_phi = objective(u, y_next) - objective(u, y_ss)
    if M_y is None:
        M_y = 2.0 * max(np.linalg.norm(y_next), np.linalg.norm(y_ss))
    if M_g is None:
        M_g = plant.lipschitz_g()
    V = cert.value(plant, x, u)
    bound = math.sqrt(max(cert.mu * M_y ** 2 * M_g ** 2 * V / (2.0 * cert.alpha2), 0.0))
    return float(e_phi), bound


@dataclass(frozen=True)
class CoupledSequenceSpec:
    """Coefficients of ``g_k <= a1 g + b1 h + d1`` and ``h_k <= a2 g + b2 h + d2``."""

    a1: float
    b1: float
    d1: float
    a2: float
    b2: float
    d2: float
    g0: float
    h0: float

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a1, self.b1], [self.a2, self.b2]])

    @property
    def sigma(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))


def coupled_sum_bound(spec: CoupledSequenceSpec, T: int) -> float:
    """``(sigma^T + 1/(1 - sigma)) (g0 + h0) + T/(1 - sigma) (d1 + d2)``."""
    sigma = spec.sigma
    if sigma >= 1:
        raise AssumptionViolation(f"bound inapplicable: sigma = {sigma:.6g} >= 1")
    return (sigma ** T + 1.0 / (1.0 - sigma)) * (spec.g0 + spec.h0) + T / (1.0 - sigma) * (spec.d1 + spec.d2)


def simulate_coupled_sequences(spec: CoupledSequenceSpec, T: int, rng=None, slack: float = 0.0):
    """Generate ``g_0..g_T`` and ``h_0..h_T``; equality recursion unless ``slack > 0``.

    With ``slack > 0`` each step is scaled down by a random factor in
    ``[1 - slack, 1]`` so inequalities hold strictly.
    """
    g = np.empty(T + 1)
    h = np.empty(T + 1)
    g[0], h[0] = spec.g0, spec.h0
    for k in range(1, T + 1):
        gk = spec.a1 * g[k - 1] + spec.b1 * h[k - 1] + spec.d1
        hk = spec.a2 * g[k - 1] + spec.b2 * h[k - 1] + spec.d2
        if slack > 0:
            gk *= 1.0 - slack * rng.random()
            hk *= 1.0 - slack * rng.random()
        g[k], h[k] = gk, hk
    return g, h


def check_coupled_sequences(spec: CoupledSequenceSpec, g, h, tol: float = 1e-12) -> bool:
    """True when the partial sums of ``g`` and ``h`` respect the bound.

    Raises ``ContractViolation`` when the sequences do not satisfy the
    recursions they are meant to illustrate.
    """
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    if g.shape != h.shape or g.ndim != 1 or g.size < 1:
        raise ContractViolation("g and h must be 1-D sequences of equal length")
    if np.any(g < 0) or np.any(h < 0):
        raise ContractViolation("sequences must be nonnegative")
    if not (np.isclose(g[0], spec.g0) and np.isclose(h[0], spec.h0)):
        raise ContractViolation("sequences must start at (g0, h0)")
    rhs_g = spec.a1 * g[:-1] + spec.b1 * h[:-1] + spec.d1
    rhs_h = spec.a2 * g[:-1] + spec.b2 * h[:-1] + spec.d2
    scale = 1.0 + np.maximum(np.abs(rhs_g), np.abs(rhs_h))
    if np.any(g[1:] > rhs_g + tol * scale) or np.any(h[1:] > rhs_h + tol * scale):
        raise ContractViolation("sequences violate the coupled recursion")
    T = g.size - 1
    bound = coupled_sum_bound(spec, T)
    return bool(max(g.sum(), h.sum()) <= bound * (1.0 + tol))


def _running_mean(x):
    x = np.asarray(x, dtype=float)
    return np.cumsum(x) / np.arange(1, x.size + 1)


def convergence_metrics(log, objective, plant, cert=None, reference=None,
                        checkpoint_interval: int = 100, checkpoint_samples: int = 10_000,
                        delta: Optional[float] = None, distribution: str = "gaussian",
                        box: Optional[BoxConstraint] = None, rng=None) -> dict:
    """Metric series for a trajectory log.

    Per step: ``state_dev_sq`` (``||x_{k+1} - x_ss(u_k, d_k)||^2``) and its
    running average, ``lyapunov`` (``V(x_k, u_k, d_k)``), ``e_phi``
    (``|Phi(u_k, y_{k+1}) - Phi~(u_k)|``), ``error`` (``||u_k - u*_k||``) and
    ``gap`` (``Phi~(u_k) - Phi*_k``).  At checkpoints (every
    ``checkpoint_interval`` steps, other rows NaN): Monte Carlo
    ``grad_norm_sq`` of the smoothed objective at ``w_k``, its running average
    over checkpoints, and ``fw_gap`` when a box is given.

    ``reference`` is ``(u_star, phi_star)`` or per-step arrays of both
    (piecewise references); when missing, ``error`` and ``gap`` are omitted
    with a warning.  Checkpoint metrics need ``delta``.
    """
    T = log.length
    plant = plant.copy()
    reduced = ReducedObjective(objective, plant)
    U, W, D = log.u, log.w, log.d
    out = {}
    phi_tilde = np.empty(T)
    state_dev = np.empty(T)
    lyap = np.empty(T)
    segments = [np.all(D == seg_d, axis=1) for seg_d in np.unique(D, axis=0)] if T else []
    for mask in segments:
        plant.set_disturbance(D[mask][0])
        phi_tilde[mask] = reduced(U[mask])
        if cert is not None:
            xss = U[mask] @ plant._x_gain_u.T + plant._x_gain_d @ plant.d
            dev_next = log.x_next[mask] - xss
            dev = log.x[mask] - xss
            state_dev[mask] = np.einsum("ij,ij->i", dev_next, dev_next)
            lyap[mask] = np.einsum("ij,jk,ik->i", dev, cert.P, dev)
    if cert is not None:
        out["state_dev_sq"] = state_dev
        out["state_dev_sq_avg"] = _running_mean(state_dev)
        out["lyapunov"] = lyap
    out["e_phi"] = np.abs(log.phi - phi_tilde)
    if reference is None:
        warnings.warn("no reference solution; optimality-gap series omitted", RuntimeWarning, stacklevel=2)
    else:
        u_star, phi_star = reference
        u_star = np.broadcast_to(np.asarray(u_star, dtype=float), U.shape)
        phi_star = np.broadcast_to(np.asarray(phi_star, dtype=float), (T,))
        out["error"] = np.linalg.norm(U - u_star, axis=1)
        out["gap"] = phi_tilde - phi_star
    if delta is not None and delta > 0 and checkpoint_interval > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        spec = SmoothingSpec(delta=delta, distribution=distribution, sample_count=checkpoint_samples)
        idx = np.arange(0, T, checkpoint_interval)
        gn = np.full(T, np.nan)
        fg = np.full(T, np.nan)
        for k in idx:
            plant.set_disturbance(D[k])
            grad, _ = smoothed_grad_oracle(reduced, spec, W[k], rng)
            gn[k] = grad @ grad
            if box is not None and box.contains(W[k]):
                fg[k] = fw_gap(grad, W[k], box)
        out["grad_norm_sq"] = gn
        avg = np.full(T, np.nan)
        avg[idx] = _running_mean(gn[idx])
        out["grad_norm_sq_avg"] = avg
        if box is not None:
            out["fw_gap"] = fg
    return out
