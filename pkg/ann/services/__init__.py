"""
AQR-HNSW services: density-aware quantized HNSW indexing and search.

The modules in this package do not require Django; ``defaults()`` picks up
the ``AQR`` settings block when a Django project is configured.
"""

from typing import Any, Dict

_BUILTIN_DEFAULTS: Dict[str, Any] = {
    "INDEX_PATH": None,
    "DEFAULT_PRESET": "0.95-0.97",
    "DENSITY_K": 10,
    "P_MAX": 5.0,
    "EPSILON": 1e-6,
    "SAMPLE_THRESHOLD": 10000,
    "SAMPLE_CAP": 5000,
}


def defaults() -> Dict[str, Any]:
    """
    Return the effective AQR defaults.

    Returns:
        Built-in defaults overlaid with ``settings.AQR`` when Django is configured
    """
    merged = dict(_BUILTIN_DEFAULTS)
    try:
        from django.conf import settings

        if settings.configured:
            merged.update(getattr(settings, "AQR", {}) or {})
    except ImportError:
        pass
    return merged
