"""Exception hierarchy shared by all cdslab modules.

Four families map onto the CLI exit codes: configuration and validation
problems (exit 1), numerical problems such as evaluating a score at zero
noise (exit 2), diverging optimization runs (exit 3), and I/O failures
(exit 4, plain ``OSError``).
"""


class ConfigError(ValueError):
    """Invalid configuration value, section, or key."""


class DomainError(ConfigError):
    """Argument outside the documented domain (for example t > horizon)."""


class ShapeError(ConfigError):
    """Array dimensions do not match the documented contract."""


class OrderError(ConfigError):
    """Time arguments violate the required ordering (needs t1 > t2)."""


class ConditionError(ConfigError):
    """A label was requested that the data distribution does not carry."""


class InputError(ConfigError):
    """Structurally invalid input, such as an empty training batch."""


class NumericalError(ArithmeticError):
    """Numerical failure: singular formula or non-finite intermediate."""


class SingularityError(NumericalError):
    """Evaluation at zero noise where the formula divides by sigma."""


class StateError(NumericalError):
    """Object holds non-finite parameters and cannot be evaluated."""


class DivergenceError(RuntimeError):
    """An optimization run left the trusted region.

    Attributes:
        last_good: Last finite parameter vector before the blow-up.
        iteration: Iteration index at which divergence was detected.
    """

    def __init__(self, message: str, last_good=None, iteration: int | None = None):
        super().__init__(message)
        self.last_good = last_good
        self.iteration = iteration


class TrainingError(DivergenceError):
    """Denoiser training diverged (loss passed the guard threshold)."""


class ScanError(RuntimeError):
    """A parameter scan failed; the message names the offending run."""


__all__ = [
    "ConfigError",
    "DomainError",
    "ShapeError",
    "OrderError",
    "ConditionError",
    "InputError",
    "NumericalError",
    "SingularityError",
    "StateError",
    "DivergenceError",
    "TrainingError",
    "ScanError",
]
