"""Embedding-dump extraction from image datasets for the mint toolchain."""

from .dataset import list_dataset
from .encoders import ClipEncoder, ToyEncoder, make_encoder
from .extract import DEFAULT_TEMPLATES, ExtractJob, corrupt_tag, ensemble_text, extract

__version__ = "0.1.0"
