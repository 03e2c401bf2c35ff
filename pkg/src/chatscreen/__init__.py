"""chatscreen: profanity screening for chat text.

Rule-based normalization and dictionary matching catch correctly spelled
profanity; a contrastively trained character-level encoder plus a
nearest-neighbor index over profane-key embeddings catch misspelled,
self-censored, and space-delimited variants. The profane vocabulary is
dynamic: adding a key needs one embedding computation, never retraining.
"""

from .normalizer import NormalizationConfig, RawChat, normalize_text
from .pipeline import Detector, PipelineConfig, Verdict, load_config

__version__ = "0.1.0"

__all__ = [
    "Detector",
    "NormalizationConfig",
    "PipelineConfig",
    "RawChat",
    "Verdict",
    "load_config",
    "normalize_text",
    "__version__",
]
