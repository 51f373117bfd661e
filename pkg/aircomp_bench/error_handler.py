"""
Centralized error handling for the AirComp benchmark.

This module provides the exception hierarchy raised by the numerical layers
and an ``ErrorHandler`` that turns failures inside a sweep into status rows
instead of aborting the run.
"""
import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Dict, Iterator, Optional, Tuple

logger = logging.getLogger(__name__)


# --- Custom Exceptions ---
class AirCompError(Exception):
    """Base class for every error raised by the package."""
    pass


class InvalidArgumentError(AirCompError, ValueError):
    """Raised when an operation receives an argument outside its domain."""
    pass


class DegenerateChannelError(AirCompError):
    """Raised when a beamformer has (numerically) zero gain on some device."""
    pass


class InfiniteMseError(AirCompError):
    """Raised when the MSE of a beamformer is unbounded."""
    pass


class SolverError(AirCompError):
    """Raised when a convex solver cannot produce a usable result."""
    pass


class InfeasibleSubproblemError(SolverError):
    """Raised when a convex subproblem is detected to be infeasible."""
    pass


class ExtractionError(AirCompError):
    """Raised when no feasible rank-one candidate can be extracted."""
    pass


class ConfigError(AirCompError, ValueError):
    """Raised for unparsable or invalid experiment configuration."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        context = []
        if key is not None:
            context.append(f"key '{key}'")
        if line is not None:
            context.append(f"line {line}")
        full = f"{message} ({', '.join(context)})" if context else message
        super().__init__(full)
        self.key = key
        self.line = line


class OutputError(AirCompError):
    """Raised when results cannot be written or read back."""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(f"{message}: {path}" if path else message)
        self.path = path


# Status strings recorded for failed operations; order matters for subclasses.
ERROR_STATUSES: Tuple[Tuple[type, str], ...] = (
    (DegenerateChannelError, "degenerate-channel"),
    (InfiniteMseError, "infinite-mse"),
    (ExtractionError, "extraction-failure"),
    (SolverError, "solver-failure"),
    (InvalidArgumentError, "invalid-argument"),
)


def status_for(error: BaseException) -> str:
    """Maps an exception to the status string stored in result rows."""
    for error_type, status in ERROR_STATUSES:
        if isinstance(error, error_type):
            return status
    return "error"


@dataclass
class OperationOutcome:
    """Filled in by ``ErrorHandler.handle_errors`` when the wrapped block fails."""
    operation: str
    error: Optional[BaseException] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def status(self) -> str:
        return "ok" if self.error is None else status_for(self.error)

    @property
    def message(self) -> str:
        return "" if self.error is None else f"{type(self.error).__name__}: {self.error}"


class ErrorHandler:
    """Logs, counts and contains failures of individual operations."""

    def __init__(self):
        self.logger = logging.getLogger(__name__)
        self.error_counts: Dict[str, int] = {}
        self._lock = threading.Lock()

    @contextmanager
    def handle_errors(self, operation_name: str, log_level: str = "WARNING") -> Iterator[OperationOutcome]:
        """Context manager that records any exception on the yielded outcome."""
        outcome = OperationOutcome(operation=operation_name)
        try:
            yield outcome
        except Exception as e:
            outcome.error = e
            self._log_error(operation_name, e, log_level)

    def _log_error(self, operation: str, error: Exception, log_level: str = "WARNING"):
        """Log error with proper formatting"""
        error_type = type(error).__name__
        error_key = f"{operation}_{error_type}"
        with self._lock:
            self.error_counts[error_key] = self.error_counts.get(error_key, 0) + 1

        log_message = f"Error in {operation}: {error_type} - {error}"
        # Unexpected exceptions get a traceback, domain errors do not.
        exc_info = not isinstance(error, AirCompError)
        level = getattr(logging, log_level.upper(), logging.WARNING)
        self.logger.log(level, log_message, exc_info=exc_info)

    def get_error_summary(self) -> dict:
        """Get summary of errors for monitoring"""
        return {
            'total_errors': sum(self.error_counts.values()),
            'error_types': self.error_counts.copy(),
            'most_common_error': max(self.error_counts.items(), key=lambda x: x[1]) if self.error_counts else None
        }

    def clear_error_counts(self):
        """Clear error count tracking"""
        self.error_counts.clear()
        logger.info("Cleared error counts")
