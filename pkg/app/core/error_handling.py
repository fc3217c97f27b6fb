# ABOUTME: Error handling decorators and numeric guards for consistent exception management
# ABOUTME: Logs package errors with context, wraps I/O failures and aborts on non-finite values

from collections.abc import Callable, Iterable
import functools
import json
import logging
from typing import Any, TypeVar

import numpy as np

from app.core.exceptions import (
    DatasetParseError,
    DivergenceError,
    DROError,
    wrap_external_error,
)

logger = logging.getLogger(__name__)

F = TypeVar('F', bound=Callable[..., Any])


def handle_exceptions(
    *,
    default_return: Any = None,
    log_errors: bool = True,
    re_raise: bool = True,
    error_context: dict[str, Any] | None = None
) -> Callable[[F], F]:
    """Decorator for standardized exception handling.

    Args:
        default_return: Value to return if exception occurs and re_raise is False
        log_errors: Whether to log caught exceptions
        re_raise: Whether to re-raise exceptions after handling
        error_context: Additional context to include in error logs

    Returns:
        Decorated function with exception handling
    """
    def decorator(func: F) -> F:
        @functools.wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            try:
                return func(*args, **kwargs)
            except Exception as e:
                if log_errors:
                    context = dict(error_context or {})
                    context.update({
                        "function": func.__name__,
                        "exception_type": type(e).__name__
                    })
                    if isinstance(e, DROError):
                        context.update(e.context)
                        logger.error(f"Error in {func.__name__}: {e}", extra={"context": context})
                    else:
                        logger.error(f"Unexpected error in {func.__name__}: {e}", extra={"context": context}, exc_info=True)

                if re_raise:
                    raise
                return default_return

        return wrapper  # type: ignore
    return decorator


def dataset_error_handler(func: F) -> F:
    """Decorator converting file-system and decoding failures into dataset errors."""
    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except DROError:
            raise
        except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
            raise wrap_external_error(
                e, DatasetParseError,
                f"Dataset I/O failed in {func.__name__}",
                "DATASET_IO_ERROR"
            ) from e

    return wrapper  # type: ignore


def ensure_finite(values: float | Iterable[float] | np.ndarray, what: str, **context: Any) -> None:
    """Raise DivergenceError when any entry of ``values`` is NaN or infinite.

    Args:
        values: Scalar or array-like to check
        what: Name of the quantity, used in the message
        **context: Additional context (instance id, iteration, ...)
    """
    array = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(array)):
        bad = int(np.size(array) - np.count_nonzero(np.isfinite(array)))
        raise DivergenceError(
            f"Non-finite {what}",
            error_code="NON_FINITE_VALUE",
            context={"quantity": what, "non_finite_entries": bad, **context},
        )
