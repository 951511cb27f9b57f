"""Exception types shared across the package."""


class MddaError(Exception):
    """Base class for all library errors."""


class ShapeError(MddaError, ValueError):
    """Operand shapes violate an operation's contract."""


class NonFiniteError(MddaError, FloatingPointError):
    """An operation produced NaN or infinity."""


class DataFormatError(MddaError, ValueError):
    """A dataset or checkpoint file is malformed."""


class ConfigError(MddaError, ValueError):
    """A configuration value is invalid or inconsistent."""


class DivergenceError(MddaError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} at step {step}")
        self.step = step
