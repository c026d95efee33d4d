"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ParameterError(ValueError):
    """A numeric parameter is outside its valid domain."""


class ParseError(ValueError):
    """Malformed input file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(ValueError):
    """Inconsistent model, window or run configuration."""


class ChainError(ValueError):
    """Markov chain has no unique stationary distribution."""


class NonFiniteError(FloatingPointError):
    """A forward value or loss term became NaN or infinite."""
