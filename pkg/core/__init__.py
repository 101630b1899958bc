"""
ufcl-core - unsupervised fine-grained clustering-learning loop.

Main components:
- neighbors: Euclidean / Jaccard distances over embeddings
- clustering: HDBSCAN and DBSCAN pseudo labels
- membank: feature-agent memory bank and ClusterNCE loss
- evaluation: outlier-aware ACC / NMI / ARI and weighted k-NN Top-1
- pipeline: the epoch loop (import core.pipeline directly)

Only dependency-free building blocks are re-exported here; the modules above
pull in the encoder and are imported explicitly.
"""

from core.dto import OUTLIER, REPORT_FIELDS, ClusterAssignment, EpochReport
from core.errors import (
    ConfigError,
    DegenerateInputError,
    DomainError,
    FormatError,
    LookupFailedError,
    NumericError,
    ParameterError,
    ShapeError,
    StorageError,
    UFCLError,
)

__all__ = [
    "OUTLIER",
    "REPORT_FIELDS",
    "ClusterAssignment",
    "EpochReport",
    "UFCLError",
    "DomainError",
    "ShapeError",
    "DegenerateInputError",
    "NumericError",
    "ParameterError",
    "ConfigError",
    "LookupFailedError",
    "FormatError",
    "StorageError",
]
