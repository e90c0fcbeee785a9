"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid grid, state, physical parameters or run configuration."""


class StepSizeError(ValueError):
    """Time step too large for the configured per-step decay bound."""


class NormCollapseError(ArithmeticError):
    """Every amplitude underflowed; the state can no longer be normalized."""


class TimeLimitExceeded(RuntimeError):
    """A time-scale measurement did not reach its threshold before t_max."""

    def __init__(self, message: str, t_max: float, final_value: float):
        super().__init__(message)
        self.t_max = t_max
        self.final_value = final_value


class CollapseFailure(RuntimeError):
    """Too many stochastic trials ended without collapsing."""
