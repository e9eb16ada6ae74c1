"""
URL Configuration for the AQR Query API
=======================================
Maps endpoints to view functions.
"""
from django.urls import path
from . import views

app_name = 'ann'

urlpatterns = [
    path('search/', views.search_index, name='search'),
    path('index/', views.index_info, name='index_info'),
    path('health/', views.health_check, name='health_check'),
]
