"""Exception hierarchy shared across the toolkit."""


class LTRError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(LTRError, ValueError):
    """Raised when array shapes are incompatible."""


class ConfigError(LTRError, ValueError):
    """Raised for invalid configuration or feature declarations."""


class DomainError(LTRError, ValueError):
    """Raised when inputs fall outside the domain an operation is defined on."""


class NumericError(LTRError, ArithmeticError):
    """Raised when a computation produces non-finite values."""


class ParseError(LTRError, ValueError):
    """Raised for malformed input files; carries the offending line number."""

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class StateError(LTRError, RuntimeError):
    """Raised when an operation is invoked in the wrong lifecycle state."""


class TrainingError(LTRError, RuntimeError):
    """Raised when training diverges."""

    def __init__(self, message, step=None, batch_id=None):
        self.step = step
        self.batch_id = batch_id
        super().__init__(message)


class CheckpointError(LTRError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    """Truncated file, bad magic, or checksum mismatch."""


class CheckpointShapeError(CheckpointError):
    pass


class MeasurementError(LTRError, ValueError):
    pass
