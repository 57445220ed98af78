"""Model-free feedback optimization of dynamical plants.

Residual one-point zeroth-order controllers (unconstrained, proximal,
Frank-Wolfe and projected variants) that drive a plant to the minimizer of a
composite objective of its steady-state input and output.  First-order
baselines, step-size planning and seeded experiment presets are included.
"""

from .analysis import (CoupledSequenceSpec, PlannerInput, StepPlan, coupled_sum_bound, fw_gap,
                       plan_constrained, plan_unconstrained, rate_mu)
from .controller import Controller, ControllerConfig, ControllerState
from .estimator import EstimatorCache, residual_estimate_gaussian, residual_estimate_sphere
from .exceptions import (AssumptionViolation, BootstrapError, CertificateError, ConfigurationError,
                         ContractViolation, EmptyFeasibleRange, FeedoptError, StabilityError)
from .objective import CompositeObjective, ReducedObjective, reference_solution
from .plant import BoxConstraint, LinearPlant, PlantDims, lyapunov_certificate

__version__ = "0.1.0"

__all__ = [
    "AssumptionViolation", "BootstrapError", "BoxConstraint", "CertificateError",
    "CompositeObjective", "ConfigurationError", "ContractViolation", "Controller",
    "ControllerConfig", "ControllerState", "CoupledSequenceSpec", "EmptyFeasibleRange",
    "EstimatorCache", "FeedoptError", "LinearPlant", "PlannerInput", "PlantDims",
    "ReducedObjective", "StabilityError", "StepPlan", "coupled_sum_bound", "fw_gap",
    "lyapunov_certificate", "plan_constrained", "plan_unconstrained", "rate_mu",
    "reference_solution", "residual_estimate_gaussian", "residual_estimate_sphere",
]
