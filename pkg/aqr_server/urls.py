"""
URL configuration for aqr_server project.

Schema and Swagger UI come from drf-spectacular; the query service itself
lives under /ann/ (see ann/urls.py).
"""
from django.urls import include, path
from drf_spectacular.views import SpectacularAPIView, SpectacularSwaggerView


urlpatterns = [
    path("schema/", SpectacularAPIView.as_view(), name="schema"),
    path("docs/", SpectacularSwaggerView.as_view(url_name="schema"), name="swagger-ui"),
    path("ann/", include("ann.urls")),
]
