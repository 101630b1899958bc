"""Per-epoch report Data Transfer Object.

The field set and its order are part of the on-disk contract: reports are
written one JSON object per line and compared byte-for-byte in replay tests.
"""

from dataclasses import dataclass
from typing import Optional

REPORT_FIELDS = (
    "epoch",
    "num_clusters",
    "num_outliers",
    "top1",
    "acc",
    "nmi",
    "ari",
    "mean_loss",
)


@dataclass
class EpochReport:
    """Metrics for one epoch of the clustering-learning loop.

    Attributes:
        epoch: 0-based epoch index
        num_clusters: Clusters found at the start of the epoch
        num_outliers: Examples left without a pseudo label
        top1: Weighted k-NN Top-1 on the held-out split (None without one)
        acc: Outlier-aware clustering accuracy (None without truth labels)
        nmi: NMI over clustered examples (None without truth labels)
        ari: ARI over clustered examples (None without truth labels)
        mean_loss: Mean ClusterNCE loss over the epoch's iterations
            (None when the epoch was skipped)
    """

    epoch: int
    num_clusters: int
    num_outliers: int
    top1: Optional[float] = None
    acc: Optional[float] = None
    nmi: Optional[float] = None
    ari: Optional[float] = None
    mean_loss: Optional[float] = None

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in REPORT_FIELDS}

    @classmethod
    def from_dict(cls, data: dict) -> "EpochReport":
        missing = [name for name in REPORT_FIELDS if name not in data]
        if missing:
            raise KeyError(f"Report is missing fields: {missing}")
        return cls(**{name: data[name] for name in REPORT_FIELDS})
