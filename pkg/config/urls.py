"""
URL configuration for BRLab project.
BRLab - Branching Genealogy Laboratory

الواجهة الوحيدة عبر الويب هي لوحة الإدارة لتصفح سجل التجارب.
"""

from django.contrib import admin
from django.urls import path

urlpatterns = [
    # Django Admin (experiment runs and comparison rows)
    path('django-admin/', admin.site.urls),
]
