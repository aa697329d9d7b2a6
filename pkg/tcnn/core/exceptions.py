# tcnn/core/exceptions.py
"""
Custom exception classes to handle different types of errors.

Every error carries a message, an exit code used by the command-line handler
and an optional detail string with extra context.
"""
from typing import Optional

EXIT_FAILURE = 1
EXIT_USAGE = 2


class TCNNError(Exception):
    """Base exception class for all toolkit errors."""
    def __init__(self, message: str, exit_code: int = EXIT_FAILURE, detail: Optional[str] = None):
        self.message = message
        self.exit_code = exit_code
        self.detail = detail
        super().__init__(self.message)

    def __str__(self) -> str:
        if self.detail:
            return f"{self.message} ({self.detail})"
        return self.message


class DimensionError(TCNNError):
    """Raised when tensor shapes do not fit an operation."""
    def __init__(self, message: str = "Dimension mismatch", detail: Optional[str] = None):
        super().__init__(message=message, detail=detail)


class UsageError(TCNNError):
    """Raised when an API or command is called in a way it does not support."""
    def __init__(self, message: str = "Invalid usage", detail: Optional[str] = None):
        super().__init__(message=message, exit_code=EXIT_USAGE, detail=detail)


class NumericError(TCNNError):
    """Raised when a computation produces non-finite values."""
    def __init__(self, message: str = "Non-finite value encountered", detail: Optional[str] = None):
        super().__init__(message=message, detail=detail)


class ConfigError(TCNNError):
    """Raised when settings, plans or layer hyper-parameters are invalid."""
    def __init__(self, message: str = "Invalid configuration", detail: Optional[str] = None):
        super().__init__(message=message, detail=detail)


class FormatError(TCNNError):
    """Raised when a checkpoint file is malformed. `offset` is the byte position of the failure."""
    def __init__(self, message: str = "Malformed file", offset: Optional[int] = None, detail: Optional[str] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} at byte offset {offset}"
        super().__init__(message=message, detail=detail)


class DataError(TCNNError):
    """Raised when dataset records or labels are invalid."""
    def __init__(self, message: str = "Invalid data", detail: Optional[str] = None):
        super().__init__(message=message, detail=detail)


class UnsupportedError(TCNNError):
    """Raised for inputs the surgery does not handle, such as even kernels."""
    def __init__(self, message: str = "Unsupported input", detail: Optional[str] = None):
        super().__init__(message=message, detail=detail)


class SurgeryError(UsageError):
    """Raised when a stage cannot be transformed, e.g. because it already was."""
    def __init__(self, message: str = "Surgery rejected", detail: Optional[str] = None):
        super().__init__(message=message, detail=detail)


class VerificationError(TCNNError):
    """Raised when two models do not agree within tolerance."""
    def __init__(self, message: str = "Models are not equivalent", detail: Optional[str] = None):
        super().__init__(message=message, detail=detail)
