"""Image folders in, FBNK feature banks out."""

from .config import ExtractorConfig
from .extract import extract

__version__ = "0.1.0"

__all__ = ["ExtractorConfig", "extract", "__version__"]
