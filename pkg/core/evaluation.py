"""
Outlier-aware clustering metrics and the weighted k-NN classifier.

ACC maps predicted clusters to classes one-to-one with the Hungarian algorithm
and divides the matched count by ALL examples, so outliers can only lower it.
NMI and ARI are computed over clustered examples only.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score
from sklearn.metrics.cluster import contingency_matrix

from core.dto.assignment import ClusterAssignment
from core.errors import NumericError, ParameterError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_KNN_K = 5
DEFAULT_KNN_TEMPERATURE = 0.07
KNN_CHUNK_ROWS = 512


def hungarian(costs) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment for a rectangular cost matrix.

    The matrix is zero-padded to square; only pairs inside the original shape
    are returned, ordered by row.
    """
    C = np.asarray(costs, dtype=np.float64)
    if C.size == 0:
        return []
    if C.ndim != 2:
        raise ShapeError(f"Cost matrix must be 2-D, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise NumericError("Cost matrix contains non-finite values")

    rows, cols = C.shape
    size = max(rows, cols)
    padded = np.zeros((size, size))
    padded[:rows, :cols] = C
    row_ind, col_ind = linear_sum_assignment(padded)
    return [
        (int(r), int(c)) for r, c in zip(row_ind.tolist(), col_ind.tolist()) if r < rows and c < cols
    ]


@dataclass(frozen=True)
class ContingencyTable:
    """Predicted clusters × true classes over clustered examples.

    Attributes:
        counts: (num_clusters, num_classes) integer counts
        n_total: All examples, outliers included
        n_clustered: Σ counts
    """

    counts: np.ndarray
    n_total: int
    n_clustered: int

    @classmethod
    def build(cls, pred: ClusterAssignment, truth) -> "ContingencyTable":
        truth = _check_truth(pred, truth)
        mask = pred.clustered_mask
        if not np.any(mask):
            return cls(counts=np.zeros((0, 0), dtype=np.int64), n_total=len(pred), n_clustered=0)
        counts = contingency_matrix(pred.labels[mask], truth[mask])
        return cls(
            counts=np.asarray(counts, dtype=np.int64),
            n_total=len(pred),
            n_clustered=int(np.count_nonzero(mask)),
        )


def _check_truth(pred: ClusterAssignment, truth) -> np.ndarray:
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    if truth.shape[0] != len(pred):
        raise ShapeError(f"{len(pred)} predictions but {truth.shape[0]} truth labels")
    return truth


def clustering_acc(pred: ClusterAssignment, truth) -> float:
    """Best-mapping accuracy: matched clustered examples / all examples."""
    table = ContingencyTable.build(pred, truth)
    if table.n_total == 0 or table.n_clustered == 0:
        return 0.0
    matched = sum(int(table.counts[r, c]) for r, c in hungarian(-table.counts))
    return matched / table.n_total


def nmi(pred: ClusterAssignment, truth) -> float:
    """Arithmetic-mean NMI over clustered examples (0 if none are clustered)."""
    truth = _check_truth(pred, truth)
    mask = pred.clustered_mask
    if not np.any(mask):
        return 0.0
    return float(
        normalized_mutual_info_score(truth[mask], pred.labels[mask], average_method="arithmetic")
    )


def ari(pred: ClusterAssignment, truth) -> float:
    """Adjusted Rand index over clustered examples (0 if none are clustered)."""
    truth = _check_truth(pred, truth)
    mask = pred.clustered_mask
    if not np.any(mask):
        return 0.0
    return float(adjusted_rand_score(truth[mask], pred.labels[mask]))


@dataclass(frozen=True)
class LabeledEmbeddings:
    """Unit-norm features with ground-truth class ids."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if features.ndim != 2 or features.shape[0] != labels.shape[0]:
            raise ShapeError(
                f"Need one label per feature row, got {features.shape} and {labels.shape[0]}"
            )
        if np.any(labels < 0):
            raise ParameterError("Ground-truth labels must be non-negative")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms == 0, 1.0, norms)


def weighted_knn_predict(
    train: LabeledEmbeddings,
    test_features,
    k: int = DEFAULT_KNN_K,
    temperature: float = DEFAULT_KNN_TEMPERATURE,
) -> np.ndarray:
    """Predicted class per test row.

    The k most cosine-similar training points vote with weight exp(s / τ);
    similarity ties go to the smaller training index, score ties to the smaller
    class id.
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    if len(train) == 0:
        raise ParameterError("weighted k-NN needs a non-empty training set")

    queries = _unit_rows(np.atleast_2d(np.asarray(test_features, dtype=np.float64)))
    memory = _unit_rows(train.features)
    if queries.shape[1] != memory.shape[1]:
        raise ShapeError(f"Test dim {queries.shape[1]} does not match train dim {memory.shape[1]}")

    num_classes = int(train.labels.max()) + 1
    count = min(k, len(train))
    predictions = np.zeros(queries.shape[0], dtype=np.int64)
    for start in range(0, queries.shape[0], KNN_CHUNK_ROWS):
        sims = queries[start : start + KNN_CHUNK_ROWS] @ memory.T
        nearest = np.argsort(-sims, axis=1, kind="stable")[:, :count]
        for row, neighbors in enumerate(nearest):
            scores = np.zeros(num_classes)
            for j in neighbors.tolist():
                scores[train.labels[j]] += np.exp(sims[row, j] / temperature)
            predictions[start + row] = int(np.argmax(scores))
    return predictions


def weighted_knn_top1(
    train: LabeledEmbeddings,
    test: LabeledEmbeddings,
    k: int = DEFAULT_KNN_K,
    temperature: float = DEFAULT_KNN_TEMPERATURE,
) -> float:
    """Fraction of test points whose weighted k-NN prediction is correct."""
    if len(test) == 0:
        if len(train) == 0:
            raise ParameterError("weighted k-NN needs a non-empty training set")
        return 0.0
    predictions = weighted_knn_predict(train, test.features, k, temperature)
    return float(np.mean(predictions == test.labels))
