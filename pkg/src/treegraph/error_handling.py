"""Error handling and logging for the treegraph pipeline."""

import logging
import traceback
from functools import wraps
from typing import Any, Callable, Dict, Optional, TypeVar

F = TypeVar("F", bound=Callable[..., Any])


class TreeGraphError(Exception):
    """Base exception for treegraph."""

    def __init__(self, message: str, error_code: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.error_code = error_code
        self.details = details or {}


class ConfigurationError(TreeGraphError):
    """Configuration related errors."""
    pass


class DataError(TreeGraphError):
    """Malformed, missing or inconsistent input data."""
    pass


class TrainingError(TreeGraphError):
    """Degenerate training (single class, no usable split, ...)."""
    pass


class CheckpointError(TreeGraphError):
    """Corrupt or version-mismatched checkpoint archive."""
    pass


class PipelineError(TreeGraphError):
    """A pipeline stage failed."""
    pass


def setup_logging(log_level: str = "INFO", log_file: Optional[str] = None) -> logging.Logger:
    """Setup logging configuration."""

    logger = logging.getLogger("treegraph")
    logger.setLevel(getattr(logging, log_level.upper(), logging.INFO))

    # Clear existing handlers
    logger.handlers.clear()

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    console_handler = logging.StreamHandler()
    console_handler.setLevel(getattr(logging, log_level.upper(), logging.INFO))
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file:
        try:
            file_handler = logging.FileHandler(log_file)
            file_handler.setLevel(logging.DEBUG)  # Always log everything to file
            file_handler.setFormatter(formatter)
            logger.addHandler(file_handler)
        except Exception as e:
            logger.warning(f"Could not create log file {log_file}: {str(e)}")

    return logger


def handle_exceptions(stage: str, logger: Optional[logging.Logger] = None) -> Callable[[F], F]:
    """Decorator labelling every failure of a pipeline stage.

    treegraph errors keep their type and gain ``details["stage"]``; anything else
    becomes a PipelineError with code STAGE_FAILED.
    """

    def decorator(func: F) -> F:
        @wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            try:
                return func(*args, **kwargs)
            except TreeGraphError as e:
                e.details.setdefault("stage", stage)
                if logger:
                    logger.error(f"Stage '{stage}' failed: {str(e)}")
                raise
            except Exception as e:
                if logger:
                    logger.error(f"Unexpected error in stage '{stage}': {str(e)}")
                    logger.debug(f"Traceback: {traceback.format_exc()}")

                raise PipelineError(
                    f"{stage}: {str(e)}",
                    error_code="STAGE_FAILED",
                    details={"stage": stage, "function": func.__name__, "original_error": str(e)}
                ) from e

        return wrapper  # type: ignore[return-value]
    return decorator


def create_error_response(error_message: str, error_code: str = "GENERAL_ERROR",
                          details: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Create standardized error response."""
    error: Dict[str, Any] = {
        "message": error_message,
        "code": error_code
    }
    if details:
        error["details"] = details
    return {
        "success": False,
        "error": error
    }
