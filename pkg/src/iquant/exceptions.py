"""Exception types raised by the designers and the experiment runner."""


class TruncationError(ValueError):
    """A model grid cuts off more tail mass than allowed."""


class DegenerateModelError(ValueError):
    """The model cannot support the requested design (e.g. constant g)."""


class BudgetExceededError(ValueError):
    """An exhaustive search would enumerate too many candidates."""


class ConfigError(ValueError):
    """An experiment configuration is invalid."""


class NumericalError(RuntimeError):
    """A computation produced non-finite or inconsistent values."""
