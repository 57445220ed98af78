"""Exception hierarchy shared by all modules."""


class FeedoptError(Exception):
    """Base class for library errors."""


class ConfigurationError(FeedoptError, ValueError):
    """Inconsistent dimensions, missing options or invalid parameters."""


class StabilityError(FeedoptError):
    """The plant has no unique steady state (spectral radius >= 1 or singular I - A)."""


class CertificateError(FeedoptError):
    """A Lyapunov certificate could not be constructed or is invalid."""


class BootstrapError(FeedoptError):
    """An estimator or controller was stepped before its priming iteration."""


class ContractViolation(FeedoptError, ValueError):
    """An input violates a documented precondition (e.g. non-unit direction)."""


class AssumptionViolation(FeedoptError):
    """A theoretical assumption required by the planner does not hold (e.g. mu >= 1)."""


class EmptyFeasibleRange(AssumptionViolation):
    """The step-size feasibility range (0, kappa*) is empty."""


class NonConvergenceError(FeedoptError):
    """An offline solver did not reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DivergenceError(FeedoptError):
    """A closed-loop run produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
