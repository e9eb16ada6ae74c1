"""
Django REST API Views for the AQR-HNSW Query Service
====================================================
Read-only endpoints over the index opened by ``index_registry``. Library
errors propagate to ``AQRExceptionMiddleware``, which renders them as JSON
with the error's status code.
"""

import logging

import numpy as np
from rest_framework import status
from rest_framework.decorators import api_view
from rest_framework.response import Response
from drf_spectacular.utils import extend_schema

from .serializers import (
    HealthResponseSerializer,
    IndexInfoResponseSerializer,
    SearchRequestSerializer,
    SearchResponseSerializer,
)
from .services import defaults, index_registry
from .services.bench_harness import preset
from .services.distance_kernels import select_kernels
from .services.search_pipeline import search

logger = logging.getLogger(__name__)

_OVERRIDES = ("n_coarse", "n_rerank", "tau_gap", "tau_ratio", "m_ef", "ef_search", "mode")


# -----------------------------------------------------------------------------
# POST /search/
# -----------------------------------------------------------------------------
@extend_schema(
    request=SearchRequestSerializer,
    responses=SearchResponseSerializer,
    tags=["AQR"],
    summary="Top-k search over the served index",
)
@api_view(["POST"])
def search_index(request):
    serializer = SearchRequestSerializer(data=request.data)
    if not serializer.is_valid():
        return Response(
            {"error": "Invalid request data", "details": serializer.errors},
            status=status.HTTP_400_BAD_REQUEST,
        )

    data = serializer.validated_data
    index = index_registry.get_index()
    chosen = preset(data.get("preset") or defaults()["DEFAULT_PRESET"])
    config = chosen.to_config(
        k=data["k"],
        early_termination=data["early_termination"],
        **{key: data.get(key) for key in _OVERRIDES},
    )
    result = search(index, np.asarray(data["vector"], dtype=np.float32), config)
    logger.debug(f"search: k={config.k} preset={chosen.name} ids={result.ids}")

    response_data = {
        "mode": (config.mode or index.mode).value,
        "preset": chosen.name,
        **result.to_dict(),
    }
    return Response(response_data, status=status.HTTP_200_OK)


# -----------------------------------------------------------------------------
# GET /index/
# -----------------------------------------------------------------------------
@extend_schema(
    responses=IndexInfoResponseSerializer,
    tags=["AQR"],
    summary="Metadata of the served index",
)
@api_view(["GET"])
def index_info(request):
    return Response(index_registry.get_index().describe(), status=status.HTTP_200_OK)


# -----------------------------------------------------------------------------
# GET /health/
# -----------------------------------------------------------------------------
@extend_schema(
    responses=HealthResponseSerializer,
    tags=["AQR"],
    summary="Health check",
)
@api_view(["GET"])
def health_check(request):
    loaded = index_registry.is_loaded()
    tier = index_registry.get_index().kernels.active_tier if loaded else select_kernels().active_tier
    return Response(
        {"status": "healthy", "index_loaded": loaded, "kernel_tier": tier.value},
        status=status.HTTP_200_OK,
    )
