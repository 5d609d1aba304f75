"""Knowledge-base enriched concept embeddings.

A CBOW concept model whose hidden layer is optionally joined with an LSTM
encoding of the target concept's ancestor path in a tree-coded hierarchy.
"""

from kbvec.errors import (
    CheckpointError,
    ConfigError,
    ConsistencyError,
    FormatError,
    KbvecError,
    TrainingDivergedError,
    UndefinedCorrelationError,
    UndefinedSimilarityError,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ConsistencyError",
    "FormatError",
    "KbvecError",
    "TrainingDivergedError",
    "UndefinedCorrelationError",
    "UndefinedSimilarityError",
]
