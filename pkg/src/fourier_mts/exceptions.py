"""Exception hierarchy shared across the package."""


class FourierMTSError(Exception):
    """Base class for all package errors."""


class DimensionError(FourierMTSError, ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


class ConfigurationError(FourierMTSError, ValueError):
    """Raised for invalid model, training or run configuration."""


class ContractError(FourierMTSError, RuntimeError):
    """Raised when a caller breaks an API precondition."""


class DataError(FourierMTSError, ValueError):
    """Raised for invalid datasets, labels or partitions."""


class ParseError(DataError):
    """Structured `.ts` parse failure.

    Attributes
    ----------
    line : int or None
        1-based line number of the offending record, when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        self.reason = message
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrainingError(FourierMTSError, RuntimeError):
    """Raised when training diverges."""

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)
