"""
ufcl-core storage - matrix/label files and run directories.
"""

from storage.matrix_store import (
    load_embeddings,
    load_labels,
    load_matrix,
    save_embeddings,
    save_labels,
    save_matrix,
)
from storage.run_store import Checkpoint, RunStore, read_reports

__all__ = [
    "Checkpoint",
    "RunStore",
    "load_embeddings",
    "load_labels",
    "load_matrix",
    "read_reports",
    "save_embeddings",
    "save_labels",
    "save_matrix",
]
