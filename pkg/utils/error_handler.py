"""
Error classification and exception hierarchy for certification and training runs.
"""

import logging
import traceback
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from threading import Lock
from typing import Any, Dict, List, Optional


logger = logging.getLogger(__name__)


class GeoCertError(Exception):
    """Base class for all errors raised by this package."""
    pass


class IntervalDomainError(GeoCertError, ValueError):
    """Raised when an interval operation leaves its mathematical domain."""
    pass


class ShapeMismatchError(GeoCertError, ValueError):
    """Raised when tensors, grids or layers disagree on shape."""
    pass


class SpecSyntaxError(GeoCertError, ValueError):
    """Raised for malformed transform, split or nu specifications."""

    def __init__(self, message: str, token: str = "", position: int = -1):
        self.token = token
        self.position = position
        if position >= 0:
            message = f"{message} (token {token!r} at position {position})"
        super().__init__(message)


class DatasetFormatError(GeoCertError):
    """Raised for malformed IDX files."""
    pass


class ModelFormatError(GeoCertError):
    """Raised when a model file cannot be decoded."""
    pass


class ChecksumMismatchError(ModelFormatError):
    pass


class SchemaVersionError(ModelFormatError):
    pass


class BlobLengthError(ModelFormatError):
    pass


class TrainingDivergenceError(GeoCertError):
    """Raised when the training loss stops being finite."""
    pass


class ErrorType(Enum):
    """Classification of error types."""
    DOMAIN_ERROR = "domain_error"
    SHAPE_ERROR = "shape_error"
    USAGE_ERROR = "usage_error"
    FORMAT_ERROR = "format_error"
    IO_ERROR = "io_error"
    DIVERGENCE_ERROR = "divergence_error"
    UNKNOWN_ERROR = "unknown_error"


class ErrorSeverity(Enum):
    """Error severity levels."""
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


@dataclass
class ErrorInfo:
    """Detailed error information attached to reports."""
    error_type: ErrorType
    severity: ErrorSeverity
    message: str
    details: Optional[Dict] = None
    timestamp: datetime = field(default_factory=datetime.utcnow)

    def to_dict(self) -> Dict:
        """Convert error info to dictionary."""
        return {
            'error_type': self.error_type.value,
            'severity': self.severity.value,
            'message': self.message,
            'details': self.details,
            'timestamp': self.timestamp.isoformat(),
        }


class ErrorHandler:
    """Classifies exceptions, keeps a bounded history and maps errors to exit codes."""

    EXIT_OK = 0
    EXIT_DOMAIN = 1
    EXIT_USAGE = 2

    def __init__(self, max_history: int = 1000):
        self.logger = logging.getLogger(__name__)
        self.max_history = max_history
        self.error_history: List[ErrorInfo] = []
        self._history_lock = Lock()

    def classify_error(self, error: Exception) -> ErrorType:
        """
        Classify error type based on exception class.

        Args:
            error: Exception to classify

        Returns:
            ErrorType enum value
        """
        if isinstance(error, SpecSyntaxError):
            return ErrorType.USAGE_ERROR
        if isinstance(error, IntervalDomainError):
            return ErrorType.DOMAIN_ERROR
        if isinstance(error, ShapeMismatchError):
            return ErrorType.SHAPE_ERROR
        if isinstance(error, (DatasetFormatError, ModelFormatError)):
            return ErrorType.FORMAT_ERROR
        if isinstance(error, TrainingDivergenceError):
            return ErrorType.DIVERGENCE_ERROR
        if isinstance(error, OSError):
            return ErrorType.IO_ERROR
        if isinstance(error, ValueError):
            return ErrorType.DOMAIN_ERROR
        return ErrorType.UNKNOWN_ERROR

    def determine_severity(self, error_type: ErrorType) -> ErrorSeverity:
        severity_map = {
            ErrorType.DIVERGENCE_ERROR: ErrorSeverity.CRITICAL,
            ErrorType.FORMAT_ERROR: ErrorSeverity.HIGH,
            ErrorType.SHAPE_ERROR: ErrorSeverity.HIGH,
            ErrorType.UNKNOWN_ERROR: ErrorSeverity.HIGH,
            ErrorType.DOMAIN_ERROR: ErrorSeverity.MEDIUM,
            ErrorType.IO_ERROR: ErrorSeverity.MEDIUM,
            ErrorType.USAGE_ERROR: ErrorSeverity.LOW,
        }
        return severity_map.get(error_type, ErrorSeverity.MEDIUM)

    def create_error_info(self, error: Exception, context: Dict = None) -> ErrorInfo:
        """
        Create detailed error information and record it in the history.

        Args:
            error: Exception that occurred
            context: Additional context information (e.g. image indices)

        Returns:
            ErrorInfo object
        """
        error_type = self.classify_error(error)
        details: Dict[str, Any] = {
            'exception_type': type(error).__name__,
            'traceback': traceback.format_exception_only(type(error), error)[-1].strip(),
            'context': context or {},
        }
        error_info = ErrorInfo(
            error_type=error_type,
            severity=self.determine_severity(error_type),
            message=str(error),
            details=details,
        )

        with self._history_lock:
            self.error_history.append(error_info)
            if len(self.error_history) > self.max_history:
                self.error_history = self.error_history[-self.max_history:]
        return error_info

    def exit_code_for(self, error: Exception) -> int:
        """Map an exception to the CLI exit code."""
        if self.classify_error(error) == ErrorType.USAGE_ERROR:
            return self.EXIT_USAGE
        return self.EXIT_DOMAIN

    def get_error_statistics(self) -> Dict:
        """
        Get error statistics.

        Returns:
            Error statistics dictionary
        """
        with self._history_lock:
            history = list(self.error_history)
        error_types: Dict[str, int] = {}
        for error in history:
            key = error.error_type.value
            error_types[key] = error_types.get(key, 0) + 1

        return {
            'total_errors': len(history),
            'error_types': error_types,
            'recent_errors': [error.to_dict() for error in history[-10:]],
        }

    def clear_error_history(self) -> int:
        with self._history_lock:
            count = len(self.error_history)
            self.error_history.clear()
        return count


# Global error handler instance
error_handler = ErrorHandler()
