"""Shared exception types."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """A scalar argument lies outside its valid range (e.g. t outside [0,1])."""


class ConfigurationError(ValueError):
    """A config combination is invalid (e.g. auxiliary loss with routing)."""


class GammaOrderingError(ConfigurationError):
    """Branch sparsity rates violate the strong < weak ordering."""


class DegenerateMaskError(ValueError):
    """A mask leaves no tokens on the side an operation requires."""


class NumericError(ArithmeticError):
    """Non-finite values encountered where finite ones are required."""


class DivergenceError(RuntimeError):
    """Sampling or training produced non-finite state."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
