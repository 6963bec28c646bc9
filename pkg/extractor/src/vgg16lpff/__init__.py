"""VGG16 feature extraction into the lpfiqa engine's on-disk dataset format.

This package is deliberately decoupled from the engine: the only contract
between the two is the documented file layout (LPFF feature files, `id,score`
manifests, key=value descriptors). Nothing here imports the engine.
"""

__version__ = "0.1.0"

from .backbone import load_backbone
from .extract import ExtractionJob, extract_features, run_extraction

__all__ = [
    "ExtractionJob",
    "extract_features",
    "load_backbone",
    "run_extraction",
]
