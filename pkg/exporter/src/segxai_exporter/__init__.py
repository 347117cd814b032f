"""Boundary adapter that exports model outputs as segxai interchange files."""

from .export import ExportError, ExportJob, export
from .models import load_model

__version__ = "0.1.0"
__all__ = ["ExportError", "ExportJob", "export", "load_model"]
