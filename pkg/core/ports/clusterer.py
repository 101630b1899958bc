"""Abstract clustering interface.

The training loop depends on this abstraction rather than on a concrete
density-based algorithm, so pseudo labels can come from HDBSCAN (default) or
the fixed-ε DBSCAN baseline.

Implementations (core/clustering.py):
- HDBSCANClusterer: hierarchy over varying ε, stability-based extraction
- DBSCANClusterer: single global ε
"""

from abc import ABC, abstractmethod

import numpy as np

from core.dto.assignment import ClusterAssignment


class Clusterer(ABC):
    """Turns a distance matrix into pseudo labels."""

    name: str = "clusterer"

    @abstractmethod
    def cluster(self, distances: np.ndarray) -> ClusterAssignment:
        """Cluster n examples given their n×n distance matrix.

        Args:
            distances: Symmetric, non-negative, zero diagonal

        Returns:
            ClusterAssignment with ids numbered by first member index and
            OUTLIER for examples that belong to no cluster
        """
        pass

    def describe(self) -> str:
        """Short human-readable parameter summary for logs and reports."""
        return self.name
