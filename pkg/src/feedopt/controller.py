"""Closed-loop feedback optimization update laws.

Model-free modes build a residual one-point gradient estimate from the newest
measured objective value and the cached previous one:

* ``unconstrained-descent``  ``w <- w - eta * phi``
* ``proximal-descent``       ``w <- prox_{eta * reg}(w - eta * phi)``
* ``frank-wolfe``            ``w <- (1 - eta) w + eta * lmo(phi)``
* ``projected-descent``      ``w <- Proj_U(w - eta * phi)``

and then apply ``u = w + delta * v`` with a fresh direction ``v``.  The
first-order baselines use a (possibly inexact) sensitivity matrix instead:

* ``first-order-prox``       proximal gradient step on the measured output
* ``first-order-projected``  projected subgradient step on the measured output
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .estimator import (EstimatorCache, GradientEstimate, residual_estimate_gaussian,
                        residual_estimate_sphere, sample_direction)
from .exceptions import BootstrapError, ConfigurationError
from .objective import prox_l1
from .plant import BoxConstraint, PlantState

__all__ = [
    "MODES",
    "MODEL_FREE_MODES",
    "FIRST_ORDER_MODES",
    "BoxConstraint",
    "ControllerConfig",
    "ControllerState",
    "Controller",
    "lmo_box",
    "project_box",
    "prime",
    "step_unconstrained",
    "step_proximal",
    "step_frank_wolfe",
    "step_projected",
    "step_first_order_prox",
    "step_first_order_projected",
]

MODEL_FREE_MODES = ("unconstrained-descent", "proximal-descent", "frank-wolfe", "projected-descent")
FIRST_ORDER_MODES = ("first-order-prox", "first-order-projected")
MODES = MODEL_FREE_MODES + FIRST_ORDER_MODES
_CONSTRAINED = ("frank-wolfe", "projected-descent", "first-order-projected")


@dataclass
class ControllerConfig:
    """Parameters of one controller.

    ``reg_weight`` overrides the objective's l1 weight when set.
    ``estimate_smooth_only`` makes the proximal model-free variant measure
    only the smooth part of the objective and leave the l1 term to the prox.
    """

    eta: float
    delta: float
    mode: str = "unconstrained-descent"
    sensitivity_matrix: Optional[np.ndarray] = None
    constraint: Optional[BoxConstraint] = None
    reg_weight: Optional[float] = None
    estimate_smooth_only: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown controller mode {self.mode!r}; choose from {MODES}")
        if not np.isfinite(self.eta) or self.eta <= 0:
            raise ConfigurationError("eta must be a positive finite number")
        if not np.isfinite(self.delta) or self.delta < 0:
            raise ConfigurationError("delta must be nonnegative")
        if self.mode == "frank-wolfe" and not self.eta < 1:
            raise ConfigurationError("frank-wolfe mode requires eta in (0, 1)")
        if self.mode in _CONSTRAINED and self.constraint is None:
            raise ConfigurationError(f"{self.mode} mode requires a box constraint")
        if self.mode in FIRST_ORDER_MODES:
            if self.sensitivity_matrix is None:
                raise ConfigurationError(f"{self.mode} mode requires a sensitivity matrix")
            self.sensitivity_matrix = np.array(self.sensitivity_matrix, dtype=float, ndmin=2)
        if self.reg_weight is not None and self.reg_weight < 0:
            raise ConfigurationError("reg_weight must be nonnegative")

    @property
    def model_free(self) -> bool:
        return self.mode in MODEL_FREE_MODES

    @property
    def distribution(self) -> str:
        return "sphere" if self.mode in ("frank-wolfe", "projected-descent") else "gaussian"


@dataclass
class ControllerState:
    """Controller memory: candidate ``w``, applied input and its direction, estimator cache."""

    w: np.ndarray
    u_applied: Optional[np.ndarray] = None
    direction: Optional[np.ndarray] = None
    cache: EstimatorCache = field(default_factory=EstimatorCache)
    step_index: int = 0
    last_estimate: Optional[GradientEstimate] = None

    @classmethod
    def initial(cls, w0) -> "ControllerState":
        return cls(w=np.array(w0, dtype=float))


def lmo_box(phi, box: BoxConstraint) -> np.ndarray:
    """Minimize ``<s, phi>`` over the box; zero components pick the midpoint."""
    phi = np.asarray(phi, dtype=float)
    return np.where(phi > 0, box.lower, np.where(phi < 0, box.upper, box.midpoint))


def project_box(z, box: BoxConstraint) -> np.ndarray:
    return np.clip(z, box.lower, box.upper)


def _reg_weight(config, objective):
    if config.reg_weight is not None:
        return config.reg_weight
    return float(getattr(objective, "reg_weight", 0.0))


def _measure(config, objective, u, y):
    if config.mode == "proximal-descent" and config.estimate_smooth_only:
        try:
            smooth = objective.smooth
        except AttributeError:
            raise ConfigurationError(
                "estimate_smooth_only needs an objective with a 'smooth' method") from None
        return smooth(u, y)
    return objective(u, y)


def _require_primed(state):
    if not state.cache.initialized or state.u_applied is None:
        raise BootstrapError("controller stepped before the priming iteration")


def _estimate(state, config, y_new, objective):
    _require_primed(state)
    current = _measure(config, objective, state.u_applied, y_new)
    if config.distribution == "sphere":
        est = residual_estimate_sphere(state.cache, config.delta, state.w.size, state.direction, current)
    else:
        est = residual_estimate_gaussian(state.cache, config.delta, state.direction, current)
    state.last_estimate = est
    return est.phi_tilde


def _perturb(state, config, rng):
    v = sample_direction(config.distribution, state.w.size, rng)
    state.direction = v
    state.u_applied = state.w + config.delta * v
    state.step_index += 1
    return state, state.u_applied


def step_unconstrained(state: ControllerState, config: ControllerConfig, y_new, objective, rng):
    """One model-free descent iteration; returns ``(state, u_next)``."""
    phi = _estimate(state, config, y_new, objective)
    state.w = state.w - config.eta * phi
    return _perturb(state, config, rng)


def step_proximal(state: ControllerState, config: ControllerConfig, y_new, objective, rng):
    phi = _estimate(state, config, y_new, objective)
    state.w = prox_l1(state.w - config.eta * phi, config.eta * _reg_weight(config, objective))
    return _perturb(state, config, rng)


def step_frank_wolfe(state: ControllerState, config: ControllerConfig, y_new, objective, rng):
    box = config.constraint
    if box is None:
        raise ConfigurationError("frank-wolfe step requires a box constraint")
    phi = _estimate(state, config, y_new, objective)
    s = lmo_box(phi, box)
    # clip only removes roundoff of the convex combination
    state.w = np.clip((1.0 - config.eta) * state.w + config.eta * s, box.lower, box.upper)
    return _perturb(state, config, rng)


def step_projected(state: ControllerState, config: ControllerConfig, y_new, objective, rng):
    box = config.constraint
    if box is None:
        raise ConfigurationError("projected step requires a box constraint")
    phi = _estimate(state, config, y_new, objective)
    state.w = project_box(state.w - config.eta * phi, box)
    return _perturb(state, config, rng)


def _first_order_gradient(state, config, y_new, objective):
    if config.sensitivity_matrix is None:
        raise ConfigurationError("first-order step requires a sensitivity matrix")
    if state.u_applied is None:
        raise BootstrapError("controller stepped before the priming iteration")
    return objective.grad_smooth_part(config.sensitivity_matrix, state.u_applied, y_new)


def step_first_order_prox(state: ControllerState, config: ControllerConfig, y_new, objective, rng=None):
    """Proximal gradient step with the configured sensitivity; no exploration noise."""
    grad = _first_order_gradient(state, config, y_new, objective)
    u_next = prox_l1(state.u_applied - config.eta * grad, config.eta * _reg_weight(config, objective))
    state.w = u_next
    state.u_applied = u_next
    state.step_index += 1
    return state, u_next


def step_first_order_projected(state: ControllerState, config: ControllerConfig, y_new, objective, rng=None):
    """Projected subgradient step; the l1 subgradient is ``sign(u)`` (zero at zero)."""
    box = config.constraint
    if box is None:
        raise ConfigurationError("first-order-projected step requires a box constraint")
    grad = _first_order_gradient(state, config, y_new, objective)
    grad = grad + _reg_weight(config, objective) * np.sign(state.u_applied)
    u_next = project_box(state.u_applied - config.eta * grad, box)
    state.w = u_next
    state.u_applied = u_next
    state.step_index += 1
    return state, u_next


_STEPS = {
    "unconstrained-descent": step_unconstrained,
    "proximal-descent": step_proximal,
    "frank-wolfe": step_frank_wolfe,
    "projected-descent": step_projected,
    "first-order-prox": step_first_order_prox,
    "first-order-projected": step_first_order_projected,
}


def prime(state: ControllerState, config: ControllerConfig, plant, plant_state: PlantState,
          rng, objective=None, settle_steps: int = 1):
    """Bootstrap iteration; returns ``(state, plant_state)``.

    Model-free modes apply ``u0 = w0 + delta v0``, advance the plant, cache
    ``Phi(u0, y1)`` and then queue ``u1 = w0 + delta v1`` without an update.
    First-order modes simply queue ``u0 = w0``.
    """
    box = config.constraint
    if box is not None and config.mode in _CONSTRAINED and not box.contains(state.w):
        raise ConfigurationError("initial point w0 must lie in the constraint set")
    if not config.model_free:
        state.u_applied = state.w.copy()
        state.cache.initialized = True
        return state, plant_state
    if objective is None:
        raise ConfigurationError("model-free priming needs the objective to evaluate")
    v0 = sample_direction(config.distribution, state.w.size, rng)
    u0 = state.w + config.delta * v0
    y = None
    for _ in range(settle_steps):
        plant_state, y = plant.step(plant_state, u0)
    state.cache.store(_measure(config, objective, u0, y), v0)
    state, _ = _perturb(state, config, rng)
    return state, plant_state


class Controller:
    """Stateful wrapper binding a config, an objective and a direction stream."""

    def __init__(self, config: ControllerConfig, objective, w0, rng: Optional[np.random.Generator] = None):
        self.config = config
        self.objective = objective
        self.rng = rng if rng is not None else np.random.default_rng()
        self.state = ControllerState.initial(w0)
        self._step = _STEPS[config.mode]

    @property
    def w(self) -> np.ndarray:
        return self.state.w

    @property
    def u(self) -> np.ndarray:
        return self.state.u_applied

    def prime(self, plant, plant_state, settle_steps: int = 1):
        self.state, plant_state = prime(self.state, self.config, plant, plant_state, self.rng,
                                        objective=self.objective, settle_steps=settle_steps)
        return plant_state

    def step(self, y_new) -> np.ndarray:
        self.state, u_next = self._step(self.state, self.config, y_new, self.objective, self.rng)
        return u_next
