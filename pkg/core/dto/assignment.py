"""Cluster assignment Data Transfer Object.

Produced by every clustering backend, consumed by the memory bank, the batch
sampler and the evaluation metrics.
"""

from dataclasses import dataclass

import numpy as np

OUTLIER = -1


@dataclass(frozen=True)
class ClusterAssignment:
    """Per-example pseudo labels.

    Attributes:
        labels: int64 array, cluster id in 0..num_clusters-1 or OUTLIER
        num_clusters: Number of distinct clusters
    """

    labels: np.ndarray
    num_clusters: int

    @classmethod
    def from_labels(cls, labels) -> "ClusterAssignment":
        """Build an assignment, renumbering clusters by first member index.

        Any negative label is treated as OUTLIER.
        """
        raw = np.asarray(labels, dtype=np.int64).reshape(-1)
        result = np.full(raw.shape[0], OUTLIER, dtype=np.int64)
        mapping: dict[int, int] = {}
        for i, label in enumerate(raw.tolist()):
            if label < 0:
                continue
            if label not in mapping:
                mapping[label] = len(mapping)
            result[i] = mapping[label]
        return cls(labels=result, num_clusters=len(mapping))

    @classmethod
    def all_outliers(cls, n: int) -> "ClusterAssignment":
        return cls(labels=np.full(n, OUTLIER, dtype=np.int64), num_clusters=0)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_outliers(self) -> int:
        return int(np.count_nonzero(self.labels == OUTLIER))

    @property
    def clustered_mask(self) -> np.ndarray:
        return self.labels != OUTLIER

    def members(self, cluster_id: int) -> np.ndarray:
        """Indices of the examples carrying `cluster_id`, ascending."""
        return np.flatnonzero(self.labels == cluster_id)

    def cluster_sizes(self) -> np.ndarray:
        if self.num_clusters == 0:
            return np.zeros(0, dtype=np.int64)
        return np.bincount(self.labels[self.clustered_mask], minlength=self.num_clusters)
