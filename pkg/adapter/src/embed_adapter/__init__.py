"""Adapter turning token lists and image directories into stylekit embedding
manifests with pluggable text/image encoders."""

from .encoders import get_encoder
from .errors import AdapterError, EncoderUnavailable, UnreadableInput
from .extract import ExtractionJob, extract

__version__ = "0.1.0"
