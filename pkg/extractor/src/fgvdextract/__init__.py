"""Batch extraction jobs around neural models (or their stubs).

The only component that touches models: generates descriptions from prompt
bundles, extracts text/image embeddings and inception-style features, and
renders reconstructed images from descriptions. Every output is written in
the evaluation engine's corpus formats and checked with `fgvd-eval validate`
after each job; the engine itself is never imported.
"""

from .jobs import ExtractorJob, GenerationParams
from .models import (
    EchoGenerator,
    HashEmbedder,
    ModelUnavailableError,
    NoiseReconstructor,
    resolve_model,
)

__version__ = "0.1.0"
