"""Weak-to-strong box-prompt toolkit.

Text-conditioned confidence maps -> uncertainty-filtered pseudo-boxes ->
semi-supervised detector -> selectively expanded box prompts -> dense masks,
exchanging tensors with external models through NPY/JSON/JSONL files.
"""

__version__ = "0.1.0"

from .types import (
    BBox,
    ConfigError,
    Detection,
    EmptyForeground,
    GridMap,
    GridShape,
    Mask,
    NumericDomainError,
    PPBoostError,
    ParseError,
    PromptEmbedding,
    SampleRecord,
    TrainingDiverged,
    ValidationError,
)

__all__ = [
    "BBox",
    "ConfigError",
    "Detection",
    "EmptyForeground",
    "GridMap",
    "GridShape",
    "Mask",
    "NumericDomainError",
    "PPBoostError",
    "ParseError",
    "PromptEmbedding",
    "SampleRecord",
    "TrainingDiverged",
    "ValidationError",
    "__version__",
]
