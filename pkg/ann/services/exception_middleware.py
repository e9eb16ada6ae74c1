"""
Exception Middleware for the AQR Query Service
==============================================
Turns library errors raised inside views into JSON responses carrying the
error's status code, and logs structured context for everything else before
Django's default 500 handling takes over.
"""

import logging
import traceback
from datetime import datetime, timezone
from typing import Any, Dict, Optional

from django.conf import settings
from django.http import HttpRequest, HttpResponse, JsonResponse
from django.utils.deprecation import MiddlewareMixin

from .exceptions import AQRError

logger = logging.getLogger(__name__)


class AQRExceptionMiddleware(MiddlewareMixin):
    """
    Maps ``AQRError`` subclasses to ``{"error", "message", "details"}`` bodies.

    Input errors (bad dimensions, bad configuration) answer 400, a missing
    index answers 503, corrupt index files 500. Any other exception is
    logged and left to Django.
    """

    def process_exception(self, request: HttpRequest, exception: Exception) -> Optional[HttpResponse]:
        """
        Args:
            request: The Django HttpRequest object
            exception: The unhandled exception that was raised

        Returns:
            JsonResponse for library errors, None otherwise
        """
        context = self._collect_exception_context(request, exception)

        if isinstance(exception, AQRError):
            log = logger.warning if exception.status_code < 500 else logger.error
            log(f"{context['exception']['type']} on {request.method} {request.path}: {exception.message}")
            return JsonResponse(exception.to_dict(), status=exception.status_code)

        logger.error(
            f"Unhandled exception: {context['exception']['type']}",
            extra={"exception_data": context},
            exc_info=True,
        )
        return None

    def _collect_exception_context(self, request: HttpRequest, exception: Exception) -> Dict[str, Any]:
        return {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "environment": "development" if settings.DEBUG else "production",
            "request": {
                "path": request.path,
                "method": request.method,
                "content_type": request.content_type,
                "query_params": dict(request.GET),
                "remote_addr": self._get_client_ip(request),
            },
            "exception": {
                "type": type(exception).__name__,
                "message": str(exception),
                "module": type(exception).__module__,
                "traceback_list": traceback.format_tb(exception.__traceback__),
            },
        }

    def _get_client_ip(self, request: HttpRequest) -> str:
        x_forwarded_for = request.META.get("HTTP_X_FORWARDED_FOR")
        if x_forwarded_for:
            return x_forwarded_for.split(",")[0].strip()
        return request.META.get("REMOTE_ADDR", "Unknown")
