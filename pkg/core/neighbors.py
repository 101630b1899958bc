"""
Pairwise distances, k-nearest-neighbor graphs and the Jaccard distance.

The Jaccard distance between two points is one minus the intersection over
union of their neighbor sets, where each set holds the point itself plus its k
nearest neighbors. It is the default input to clustering.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import sparse

from core.errors import NumericError, ParameterError, ShapeError

logger = logging.getLogger(__name__)

DISTANCE_CHUNK_ROWS = 64


class DistanceKind(Enum):
    """Distance fed to the clustering step."""

    EUCLIDEAN = "euclidean"
    JACCARD = "jaccard"


@dataclass(frozen=True)
class KnnGraph:
    """k nearest other points per row, ascending by distance.

    Attributes:
        indices: (n, min(k, n-1)) neighbor indices
        distances: matching distances
        k: Requested neighbor count
    """

    indices: np.ndarray
    distances: np.ndarray
    k: int

    @property
    def n(self) -> int:
        return int(self.indices.shape[0])

    def neighbors(self, i: int) -> list[tuple[int, float]]:
        return list(zip(self.indices[i].tolist(), self.distances[i].tolist()))


def pairwise_euclidean(X, workers: int = 1) -> np.ndarray:
    """Dense Euclidean distance matrix.

    Rows are computed in fixed blocks (optionally on worker threads); each
    entry is computed from the immutable input alone and the upper triangle
    is mirrored, so the result is exactly symmetric with a zero diagonal and
    independent of the worker count.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0:
        return np.zeros((0, 0))
    if X.ndim != 2:
        raise ShapeError(f"Expected a 2-D matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NumericError("Distance input contains non-finite values")

    n = X.shape[0]
    D = np.empty((n, n))

    def fill(start: int) -> None:
        rows = X[start : start + DISTANCE_CHUNK_ROWS]
        diff = rows[:, None, :] - X[None, :, :]
        D[start : start + rows.shape[0]] = np.sqrt(np.sum(diff * diff, axis=-1))

    starts = range(0, n, DISTANCE_CHUNK_ROWS)
    if workers > 1 and n > DISTANCE_CHUNK_ROWS:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, starts))
    else:
        for start in starts:
            fill(start)

    upper = np.triu(D, k=1)
    return upper + upper.T


def knn_graph(D, k: int) -> KnnGraph:
    """k nearest other points of every row of a distance matrix.

    Ties are broken by the smaller index; each list has min(k, n-1) entries.
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    count = min(k, max(n - 1, 0))
    if count == 0:
        empty = np.zeros((n, 0))
        return KnnGraph(indices=empty.astype(np.int64), distances=empty, k=k)

    masked = D.copy()
    np.fill_diagonal(masked, np.inf)
    # stable sort keeps ascending index order among equal distances
    order = np.argsort(masked, axis=1, kind="stable")[:, :count]
    distances = np.take_along_axis(D, order, axis=1)
    return KnnGraph(indices=order.astype(np.int64), distances=distances, k=k)


def jaccard_distance(graph: KnnGraph) -> np.ndarray:
    """d(a, b) = 1 - |S(a) ∩ S(b)| / |S(a) ∪ S(b)|, S(x) = {x} ∪ neighbors(x)."""
    n = graph.n
    if n == 0:
        return np.zeros((0, 0))
    width = graph.indices.shape[1] + 1
    rows = np.repeat(np.arange(n), width)
    cols = np.concatenate([np.arange(n)[:, None], graph.indices], axis=1).reshape(-1)
    membership = sparse.csr_matrix(
        (np.ones(rows.shape[0]), (rows, cols)), shape=(n, n), dtype=np.float64
    )

    intersection = (membership @ membership.T).toarray()
    sizes = np.asarray(membership.sum(axis=1)).reshape(-1)
    union = sizes[:, None] + sizes[None, :] - intersection
    result = 1.0 - intersection / union
    np.fill_diagonal(result, 0.0)
    return result


def clustering_distances(
    X, kind: DistanceKind = DistanceKind.JACCARD, jaccard_k: int = 30, workers: int = 1
) -> np.ndarray:
    """Distance matrix used as clustering input for embeddings X."""
    kind = DistanceKind(kind)
    euclidean = pairwise_euclidean(X, workers=workers)
    if kind is DistanceKind.EUCLIDEAN:
        return euclidean
    logger.debug(f"Building Jaccard distances over {euclidean.shape[0]} points, k={jaccard_k}")
    return jaccard_distance(knn_graph(euclidean, jaccard_k))
