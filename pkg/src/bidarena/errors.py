"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad shapes, unknown kinds, malformed files."""


class InputError(ValueError):
    """Invalid runtime input, such as out-of-domain values."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite intermediate or result."""


class InnerLoopError(NumericError):
    """Numeric failure inside simulated seller retraining.

    Carries the inner-loop iteration index at which the failure occurred.
    """

    def __init__(self, message, iteration):
        super().__init__(f"{message} (inner-loop iteration {iteration})")
        self.iteration = iteration
