"""
Error Hierarchy for the AQR-HNSW Services
==========================================
Every failure raised by the library is an ``AQRError``. The CLI turns them
into one-line diagnostics; the HTTP layer turns them into JSON bodies.
"""

from typing import Any, Dict, Optional


class AQRError(Exception):
    """Base class for all library errors."""

    status_code = 500

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for API responses"""
        result = {
            "error": type(self).__name__,
            "message": self.message,
        }
        if self.details:
            result["details"] = self.details
        return result


class DatasetFormatError(AQRError):
    """Malformed fvecs/ivecs/bvecs file or invalid in-memory dataset."""

    status_code = 400


class InsufficientPointsError(AQRError):
    """Too few points for the requested neighbor count."""

    status_code = 400


class NumericalDomainError(AQRError):
    """Input outside the domain of a statistic (empty list, non-positive mean)."""

    status_code = 400


class DimensionMismatchError(AQRError):
    """Vector lengths disagree with each other or with the index."""

    status_code = 400


class ConfigurationError(AQRError):
    """Invalid build/search configuration, preset, sweep axis or kernel override."""

    status_code = 400


class IndexFormatError(AQRError):
    """Index file is not an AQR index, has the wrong version, or is corrupt."""

    status_code = 500


class DuplicateIdError(AQRError):
    """Node id inserted twice."""

    status_code = 400


class EmptyIndexError(AQRError):
    """Search issued against an index without nodes."""

    status_code = 409


class IndexNotConfiguredError(AQRError):
    """The query service has no index to serve."""

    status_code = 503


class MeasurementError(AQRError):
    """Benchmark inputs that cannot produce a measurement."""

    status_code = 400
