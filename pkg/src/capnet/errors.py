"""Exception hierarchy shared across the toolkit."""


class CapnetError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(CapnetError):
    """Vector/matrix sizes do not agree."""


class DomainError(CapnetError):
    """An input lies outside the admissible set (e.g. the actuator box)."""


class TuningError(CapnetError):
    """Controller gains violate a structural requirement of an operation."""


class FlowSolverError(CapnetError):
    """The hydraulic Newton solver failed to produce a valid flow vector."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class IntegrationError(CapnetError):
    """Time integration failed (step-size underflow, inner Newton failure)."""

    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state


class EquilibriumError(CapnetError):
    """Fixed-point iteration for a closed-loop equilibrium did not converge."""


class ConfigError(CapnetError):
    """A scenario/network configuration file is malformed or inconsistent."""
