# ABOUTME: Exception hierarchy for datasets, models, estimation, optimization, oracles and training
# ABOUTME: Every error carries a machine-readable code and a context dict for structured logs

from typing import Any


class DROError(Exception):
    """Base exception for all errors raised by the package."""

    def __init__(
        self,
        message: str,
        error_code: str | None = None,
        context: dict[str, Any] | None = None,
        original_error: Exception | None = None
    ) -> None:
        """Initialize base exception with context.

        Args:
            message: Human-readable error message
            error_code: Machine-readable error code for programmatic handling
            context: Additional context information for debugging
            original_error: Original exception that caused this error
        """
        super().__init__(message)
        self.message = message
        self.error_code = error_code
        self.context = context or {}
        self.original_error = original_error

    def __str__(self) -> str:
        """Return string representation of error."""
        parts = [self.message]
        if self.error_code:
            parts.append(f"(Code: {self.error_code})")
        if self.context:
            context_str = ", ".join(f"{k}={v}" for k, v in self.context.items())
            parts.append(f"[{context_str}]")
        return " ".join(parts)


# Configuration Errors
class ConfigurationError(DROError):
    """Raised when configuration is invalid or missing."""
    pass


class InvalidConfigurationError(ConfigurationError):
    """Raised when configuration keys or values are invalid."""
    pass


# Dataset Errors
class DatasetError(DROError):
    """Base exception for dataset I/O errors."""
    pass


class DatasetParseError(DatasetError):
    """Raised when a dataset line cannot be parsed; context carries the line number."""
    pass


class DatasetValidationError(DatasetError):
    """Raised when an instance violates an invariant; context names the instance and field."""
    pass


# Model Errors
class ModelError(DROError):
    """Base exception for selector and generator evaluation errors."""
    pass


class DimensionMismatchError(ModelError):
    """Raised when parameter and feature dimensions disagree."""
    pass


class InvalidPermutationError(ModelError):
    """Raised for duplicate or out-of-range document indices."""
    pass


class SelectionConfigError(ModelError):
    """Raised when the permutation length does not fit the candidate pool."""
    pass


class UnknownAnswerError(ModelError):
    """Raised when an answer is not in the instance's answer-candidate set."""
    pass


# Estimation Errors
class EstimationError(DROError):
    """Base exception for the permutation estimation step."""
    pass


class EmptyWeightsError(EstimationError):
    """Raised when asked to normalize an empty weight list."""
    pass


# Optimization Errors
class OptimizationError(DROError):
    """Base exception for the maximization step."""
    pass


class EmptyBatchError(OptimizationError):
    """Raised when a loss is requested for an empty batch."""
    pass


class DivergenceError(OptimizationError):
    """Raised when a gradient, loss or parameter becomes non-finite."""
    pass


# Oracle Errors
class OracleError(DROError):
    """Base exception for exact enumeration oracles."""
    pass


class EnumerationCapExceededError(OracleError):
    """Raised when the permutation space exceeds the enumeration cap."""
    pass


class InvalidDistributionError(OracleError):
    """Raised when a distribution over permutations is not normalized."""
    pass


class SupportMismatchError(OracleError):
    """Raised when the posterior puts mass where the proposal has none."""
    pass


# Training Errors
class TrainingError(DROError):
    """Base exception for the training loop and evaluation."""
    pass


class EmptyDatasetError(TrainingError):
    """Raised when evaluation or training receives no instances."""
    pass


# Checkpoint Errors
class CheckpointError(DROError):
    """Base exception for checkpoint persistence."""
    pass


class CheckpointCorruptError(CheckpointError):
    """Raised when a checkpoint file cannot be decoded."""
    pass


class CheckpointFingerprintError(CheckpointError):
    """Raised when a checkpoint was produced under an incompatible configuration."""
    pass


# Synthetic Task and Metric Errors
class TaskSpecError(DROError):
    """Raised when synthetic task settings violate its invariants."""
    pass


class MetricError(DROError):
    """Raised when a metric is evaluated outside its domain."""
    pass


# Error handling utilities
def wrap_external_error(
    original_error: Exception,
    service_error_class: type[DROError],
    message: str,
    error_code: str | None = None,
    context: dict[str, Any] | None = None
) -> DROError:
    """Wrap external exceptions in package error types.

    Args:
        original_error: The original exception to wrap
        service_error_class: The package error class to use
        message: Human-readable error message
        error_code: Machine-readable error code
        context: Additional context for debugging

    Returns:
        Package error with original error context
    """
    enhanced_context = context or {}
    enhanced_context.update({
        "original_error_type": type(original_error).__name__,
        "original_error_message": str(original_error)
    })

    return service_error_class(
        message=message,
        error_code=error_code,
        context=enhanced_context,
        original_error=original_error
    )


def create_error_context(**kwargs: Any) -> dict[str, Any]:
    """Create error context dictionary with non-None values.

    Args:
        **kwargs: Context key-value pairs

    Returns:
        Dictionary with non-None values only
    """
    return {k: v for k, v in kwargs.items() if v is not None}
