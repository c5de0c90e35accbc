"""HTTP scoring shim: one classifier behind POST /score and GET /health."""

from .models import ServedModel, load_model, stub3_model
from .server import create_app, main

__version__ = "0.1.0"

__all__ = ["ServedModel", "create_app", "load_model", "main", "stub3_model"]
