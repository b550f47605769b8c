"""FastAPI service exposing a protected model behind budgeted sessions."""

from .app import create_app

__all__ = ["create_app"]
