"""Multilingual profiling of hate-speech spreaders on social media.

A small numpy framework that classifies whole author feeds: posts are
embedded (by a tiny trainable transformer or precomputed vectors), pooled
with post-level attention, and classified with a two-layer head. Training
runs stratified cross-validation with AdamW; predictions ensemble the fold
models by majority vote, and every prediction can be explained at the post
and token level.
"""

__version__ = "1.0.0"

from .backend import USE_NUMBA, backend_name
from .errors import (ConfigError, ConsistencyError, CorpusParseError,
                     DegenerateInputError, DimensionError, FormatError,
                     HateProfilerError, InputError, TrainingDivergedError,
                     UnknownAuthorError)

__all__ = [
    "USE_NUMBA",
    "backend_name",
    "HateProfilerError",
    "ConfigError",
    "ConsistencyError",
    "CorpusParseError",
    "DegenerateInputError",
    "DimensionError",
    "FormatError",
    "InputError",
    "TrainingDivergedError",
    "UnknownAuthorError",
    "__version__",
]
