"""embed-sidecar: HTTP sentence-embedding service for corpus-forge."""

__version__ = "0.1.0"

from .app import create_app
from .models import HashTrigramModel, load_model
