"""
Process-wide cache of the index served by the HTTP API.

The index named by ``settings.AQR["INDEX_PATH"]`` is loaded on first use and
shared by every request thread; a loaded index is immutable.
"""

import logging
import threading
from typing import Optional

from . import defaults
from .exceptions import IndexNotConfiguredError
from .hnsw_graph import GraphIndex

logger = logging.getLogger(__name__)

_lock = threading.Lock()
_index: Optional[GraphIndex] = None


def get_index() -> GraphIndex:
    """
    Return the served index, loading it on first call.

    Raises:
        IndexNotConfiguredError: If AQR_INDEX_PATH is not set
        IndexFormatError: If the file cannot be loaded
    """
    global _index
    if _index is not None:
        return _index
    with _lock:
        if _index is None:
            path = defaults().get("INDEX_PATH")
            if not path:
                raise IndexNotConfiguredError("no index configured (set AQR_INDEX_PATH)")
            _index = GraphIndex.load(path)
    return _index


def is_loaded() -> bool:
    return _index is not None


def set_index(index: Optional[GraphIndex]) -> None:
    """Install an already-built index (or clear it with None)."""
    global _index
    with _lock:
        _index = index
