"""
WSGI entry point for serving the AQR-HNSW query API.

Run with gunicorn, e.g.:

    AQR_INDEX_PATH=index.aqr gunicorn aqr_server.wsgi:application --workers 2

Each worker opens the index once (see ann.services.index_registry).
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'aqr_server.settings')

application = get_wsgi_application()
