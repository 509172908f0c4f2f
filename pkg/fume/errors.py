"""fume/errors.py

Exception hierarchy shared by every fume module. Each error carries the
process exit code the CLI reports for it.
"""

from typing import Any, Dict, Optional
import logging

logger = logging.getLogger(__name__)


class FumeError(Exception):
    """Base class for fume errors."""
    exit_code = 1

    def __init__(self, message: str, exit_code: Optional[int] = None, details: Optional[Dict[str, Any]] = None):
        self.message = message
        if exit_code is not None:
            self.exit_code = exit_code
        self.details = details
        super().__init__(self.message)

    def __str__(self) -> str:
        return f"{self.message} (exit code: {self.exit_code})"


class ConfigError(FumeError):
    """Raised for malformed or invalid run configuration."""
    exit_code = 2


class VariantError(ConfigError):
    """Raised when an unknown model variant is requested."""
    pass


class DataError(FumeError):
    """Raised when dataset files are missing, unwritable or inconsistent."""
    exit_code = 3


class NumericError(FumeError):
    """Raised on non-finite losses or gradients."""
    exit_code = 4


class ShapeError(FumeError, ValueError):
    """Raised when tensor shapes do not fit a kernel."""
    exit_code = 4


class CheckpointError(FumeError):
    """Raised when a checkpoint file is missing, truncated or corrupt."""
    exit_code = 5


def handle_error(err: FumeError) -> Dict[str, Any]:
    """
    Log a fume error and return a standardized payload.

    Args:
        err: The error to handle

    Returns:
        A dictionary with standardized error information
    """
    error_type = type(err).__name__

    if err.details:
        logger.error(f"{error_type}: {err.message}. Details: {err.details}")
    else:
        logger.error(f"{error_type}: {err.message}")

    payload = {
        "error": {
            "type": error_type,
            "message": err.message,
            "exit_code": err.exit_code,
        },
        "success": False,
    }
    if err.details:
        payload["error"]["details"] = err.details
    return payload
