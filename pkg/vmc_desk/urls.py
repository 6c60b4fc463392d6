"""vmc_desk URL Configuration

Only the admin is routed; it is the browser for run and artifact records.
    https://docs.djangoproject.com/en/4.2/topics/http/urls/
"""
from django.contrib import admin
from django.urls import path

urlpatterns = [
    path('admin/', admin.site.urls),
]
