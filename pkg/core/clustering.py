"""
Density-based clustering that produces pseudo labels.

HDBSCAN builds the hierarchy of DBSCAN clusterings over all ε at once:
core distances -> mutual reachability -> minimum spanning tree -> single
linkage -> condensed tree -> excess-of-mass extraction. DBSCAN with one global
ε is kept as the baseline.

Condensed-tree node ids: points are 0..n-1, the root cluster is n and new
clusters get n+1, n+2, ... in creation order, so a child cluster always has a
larger id than its parent.
"""

import logging
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

import numpy as np

from core.dto.assignment import OUTLIER, ClusterAssignment
from core.errors import NumericError, ParameterError, ShapeError
from core.ports.clusterer import Clusterer

logger = logging.getLogger(__name__)

DEFAULT_MIN_CLUSTER_SIZE = 5
DEFAULT_DBSCAN_EPS = 0.4
DEFAULT_DBSCAN_MIN_PTS = 4

# ε is floored here before taking λ = 1/ε (duplicate points merge at ε = 0)
LAMBDA_EPSILON_FLOOR = 1e-12


class ClusteringMethod(Enum):
    HDBSCAN = "hdbscan"
    DBSCAN = "dbscan"


@dataclass(frozen=True)
class MstEdgeList:
    """Spanning tree over n points as (a, b, weight) with a < b."""

    n: int
    edges: tuple[tuple[int, int, float], ...]

    @property
    def total_weight(self) -> float:
        return float(sum(weight for _, _, weight in self.edges))


@dataclass(frozen=True)
class CondensedNode:
    """One cluster of the condensed tree.

    Attributes:
        node_id: Cluster id (>= n)
        parent: Parent cluster id, None for the root
        birth_lambda: λ at which the cluster appears (0 for the root)
        death_lambda: Largest λ at which anything leaves the cluster
        size: Member count at birth
        stability: Σ over leaving points/children of (λ_leave - birth_lambda) · count
        children: Child cluster ids (empty for a leaf)
    """

    node_id: int
    parent: Optional[int]
    birth_lambda: float
    death_lambda: float
    size: int
    stability: float
    children: tuple[int, ...]


@dataclass(frozen=True)
class CondensedTree:
    """Condensed cluster hierarchy.

    The edge table (parent, child, lambda_val, child_size) has one row per point
    falling out of a cluster (child < n, size 1) and one row per child cluster.
    """

    n: int
    min_cluster_size: int
    parent: np.ndarray
    child: np.ndarray
    lambda_val: np.ndarray
    child_size: np.ndarray
    nodes: dict[int, CondensedNode]

    @property
    def root(self) -> int:
        return self.n

    def descendants(self, node_id: int) -> list[int]:
        """All cluster ids strictly below node_id."""
        result: list[int] = []
        stack = list(self.nodes[node_id].children)
        while stack:
            current = stack.pop()
            result.append(current)
            stack.extend(self.nodes[current].children)
        return result


def _as_distance_matrix(D) -> np.ndarray:
    D = np.asarray(D, dtype=np.float64)
    if D.size == 0:
        return np.zeros((0, 0))
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ShapeError(f"Distance matrix must be square, got shape {D.shape}")
    if not np.all(np.isfinite(D)):
        raise NumericError("Distance matrix contains non-finite values")
    return D


def _lambda(distance: float) -> float:
    return 1.0 / max(float(distance), LAMBDA_EPSILON_FLOOR)


def core_distances(D, min_samples: int) -> np.ndarray:
    """Distance from each point to its min_samples-th nearest other point."""
    D = _as_distance_matrix(D)
    n = D.shape[0]
    if min_samples < 1 or min_samples >= n:
        raise ParameterError(f"min_samples must be in [1, {n - 1}], got {min_samples}")
    # index 0 of each sorted row is the point itself
    return np.sort(D, axis=1)[:, min_samples]


def mutual_reachability(D, cores) -> np.ndarray:
    """mr(a, b) = max(core(a), core(b), d(a, b))."""
    D = _as_distance_matrix(D)
    cores = np.asarray(cores, dtype=np.float64)
    if cores.shape != (D.shape[0],):
        raise ShapeError(f"Expected {D.shape[0]} core distances, got shape {cores.shape}")
    return np.maximum(D, np.maximum.outer(cores, cores))


def mst(mr) -> MstEdgeList:
    """Prim's algorithm on a dense matrix.

    Among equal weights the edge with the lexicographically smaller
    (min index, max index) wins, both when picking and when relaxing.
    """
    mr = _as_distance_matrix(mr)
    n = mr.shape[0]
    if n < 2:
        raise ParameterError(f"A spanning tree needs at least 2 points, got {n}")

    index = np.arange(n)
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = mr[0].copy()
    source = np.zeros(n, dtype=np.int64)
    edges: list[tuple[int, int, float]] = []

    for _ in range(n - 1):
        candidates = np.flatnonzero(~in_tree)
        sources = source[candidates]
        lo = np.minimum(candidates, sources)
        hi = np.maximum(candidates, sources)
        pick = int(candidates[np.lexsort((hi, lo, best[candidates]))[0]])
        origin = int(source[pick])
        edges.append((min(origin, pick), max(origin, pick), float(best[pick])))
        in_tree[pick] = True

        row = mr[pick]
        new_lo, new_hi = np.minimum(index, pick), np.maximum(index, pick)
        old_lo, old_hi = np.minimum(index, source), np.maximum(index, source)
        smaller_key = (new_lo < old_lo) | ((new_lo == old_lo) & (new_hi < old_hi))
        better = ((row < best) | ((row == best) & smaller_key)) & ~in_tree
        best[better] = row[better]
        source[better] = pick

    return MstEdgeList(n=n, edges=tuple(edges))


class _UnionFind:
    """Union-find over dendrogram labels; merged clusters get fresh labels n, n+1, ..."""

    def __init__(self, n: int):
        self.parent = [-1] * (2 * n - 1)
        self.size = [1] * n + [0] * (n - 1)
        self.next_label = n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != -1:
            root = self.parent[root]
        while self.parent[x] != -1 and self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        label = self.next_label
        self.parent[a] = label
        self.parent[b] = label
        self.size[label] = self.size[a] + self.size[b]
        self.next_label += 1
        return label


def single_linkage(tree: MstEdgeList) -> np.ndarray:
    """Dendrogram in scipy linkage format: rows (left, right, distance, size).

    Edges are merged in (weight, a, b) order.
    """
    n = tree.n
    ordered = sorted(tree.edges, key=lambda edge: (edge[2], edge[0], edge[1]))
    uf = _UnionFind(n)
    rows = np.zeros((n - 1, 4))
    for i, (a, b, weight) in enumerate(ordered):
        left, right = uf.find(a), uf.find(b)
        rows[i] = (left, right, weight, uf.size[left] + uf.size[right])
        uf.union(left, right)
    return rows


def _bfs(hierarchy: np.ndarray, start: int, n: int) -> list[int]:
    order: list[int] = []
    frontier = [start]
    while frontier:
        order.extend(frontier)
        following: list[int] = []
        for node in frontier:
            if node >= n:
                following.extend(int(c) for c in hierarchy[node - n, :2])
        frontier = following
    return order


def condense_tree(tree: MstEdgeList, min_cluster_size: int) -> CondensedTree:
    """Condense the single-linkage dendrogram of an MST.

    Walking down from the root, a split where both sides have at least
    min_cluster_size members creates two child clusters; otherwise the small
    side's points fall out of the current cluster at that λ and the cluster
    continues as the large side.
    """
    if min_cluster_size < 2:
        raise ParameterError(f"min_cluster_size must be >= 2, got {min_cluster_size}")
    n = tree.n
    hierarchy = single_linkage(tree)

    def size_of(node: int) -> int:
        return 1 if node < n else int(hierarchy[node - n, 3])

    root = 2 * n - 2
    relabel = {root: n}
    next_label = n + 1
    ignore: set[int] = set()
    rows: list[tuple[int, int, float, int]] = []

    for node in _bfs(hierarchy, root, n):
        if node < n or node in ignore:
            continue
        left, right, distance, _ = hierarchy[node - n]
        lam = _lambda(distance)
        parent_label = relabel[node]
        sides = [(int(left), size_of(int(left))), (int(right), size_of(int(right)))]

        if all(size >= min_cluster_size for _, size in sides):
            for side, size in sides:
                relabel[side] = next_label
                rows.append((parent_label, next_label, lam, size))
                next_label += 1
            continue

        for side, size in sides:
            if size >= min_cluster_size:
                relabel[side] = parent_label
                continue
            for sub in _bfs(hierarchy, side, n):
                if sub < n:
                    rows.append((parent_label, sub, lam, 1))
                ignore.add(sub)

    return _build_condensed(n, min_cluster_size, rows)


def _build_condensed(
    n: int, min_cluster_size: int, rows: list[tuple[int, int, float, int]]
) -> CondensedTree:
    parent = np.array([r[0] for r in rows], dtype=np.int64)
    child = np.array([r[1] for r in rows], dtype=np.int64)
    lambda_val = np.array([r[2] for r in rows], dtype=np.float64)
    child_size = np.array([r[3] for r in rows], dtype=np.int64)

    births = {n: 0.0}
    sizes = {n: n}
    parents: dict[int, Optional[int]] = {n: None}
    children: dict[int, list[int]] = {n: []}
    for p, c, lam, size in rows:
        if c >= n:
            births[c] = lam
            sizes[c] = size
            parents[c] = p
            children[c] = []
            children[p].append(c)

    stability = {node: 0.0 for node in births}
    deaths = dict(births)
    for p, _, lam, size in rows:
        stability[p] += (lam - births[p]) * size
        deaths[p] = max(deaths[p], lam)

    nodes = {
        node: CondensedNode(
            node_id=node,
            parent=parents[node],
            birth_lambda=births[node],
            death_lambda=deaths[node],
            size=sizes[node],
            stability=stability[node],
            children=tuple(children[node]),
        )
        for node in sorted(births)
    }
    return CondensedTree(
        n=n,
        min_cluster_size=min_cluster_size,
        parent=parent,
        child=child,
        lambda_val=lambda_val,
        child_size=child_size,
        nodes=nodes,
    )


def select_clusters(tree: CondensedTree) -> list[int]:
    """Excess-of-mass selection of non-overlapping cluster nodes.

    Bottom-up: a node with children is selected only if its own stability is
    strictly greater than the summed stability selected below it; otherwise that
    sum is carried upward. The root only stands as a cluster of its own when it
    never splits and holds at least min_cluster_size points.
    """
    root_node = tree.nodes[tree.root]
    if not root_node.children:
        return [tree.root] if tree.n >= tree.min_cluster_size else []

    carried: dict[int, float] = {}
    selected: set[int] = set()
    for node_id in sorted(tree.nodes, reverse=True):
        if node_id == tree.root:
            continue
        node = tree.nodes[node_id]
        below = sum(carried[c] for c in node.children)
        if node.children and below >= node.stability:
            carried[node_id] = below
            continue
        carried[node_id] = node.stability
        selected.add(node_id)
        selected.difference_update(tree.descendants(node_id))
    return sorted(selected)


def extract_clusters(tree: CondensedTree) -> ClusterAssignment:
    """Flat clustering from the condensed tree.

    A point belongs to the nearest selected cluster at or above the cluster it
    fell out of; points with no selected ancestor are OUTLIERs. A root that
    stands alone follows the same rule, so it takes every point.
    """
    n = tree.n
    selected = select_clusters(tree)
    if not selected:
        return ClusterAssignment.all_outliers(n)

    labels = np.full(n, OUTLIER, dtype=np.int64)
    point_rows = tree.child < n

    chosen = set(selected)
    owner: dict[int, Optional[int]] = {}
    for node_id in sorted(tree.nodes):
        if node_id in chosen:
            owner[node_id] = node_id
        else:
            parent = tree.nodes[node_id].parent
            owner[node_id] = owner[parent] if parent is not None else None

    for p, c in zip(tree.parent[point_rows].tolist(), tree.child[point_rows].tolist()):
        if owner[p] is not None:
            labels[c] = owner[p]
    return ClusterAssignment.from_labels(labels)


def hdbscan(
    D, min_cluster_size: int = DEFAULT_MIN_CLUSTER_SIZE, min_samples: Optional[int] = None
) -> ClusterAssignment:
    """HDBSCAN pseudo labels for an n×n distance matrix.

    min_samples defaults to min_cluster_size and is capped at n-1.
    """
    if min_cluster_size < 2:
        raise ParameterError(f"min_cluster_size must be >= 2, got {min_cluster_size}")
    D = _as_distance_matrix(D)
    n = D.shape[0]
    if n <= 1:
        return ClusterAssignment.all_outliers(n)

    samples = min_cluster_size if not min_samples else min_samples
    samples = min(samples, n - 1)
    cores = core_distances(D, samples)
    tree = condense_tree(mst(mutual_reachability(D, cores)), min_cluster_size)
    assignment = extract_clusters(tree)
    logger.debug(
        f"HDBSCAN n={n} min_cluster_size={min_cluster_size} min_samples={samples}: "
        f"{assignment.num_clusters} clusters, {assignment.num_outliers} outliers"
    )
    return assignment


def dbscan(
    D, eps: float = DEFAULT_DBSCAN_EPS, min_pts: int = DEFAULT_DBSCAN_MIN_PTS
) -> ClusterAssignment:
    """Classic DBSCAN over a distance matrix.

    A point is core when at least min_pts points (itself included) lie within
    eps. Clusters grow through core points in index order; a border point joins
    the cluster of the lowest-index core point within eps.
    """
    if eps <= 0:
        raise ParameterError(f"eps must be > 0, got {eps}")
    if min_pts < 1:
        raise ParameterError(f"min_pts must be >= 1, got {min_pts}")
    D = _as_distance_matrix(D)
    n = D.shape[0]
    if n == 0:
        return ClusterAssignment.all_outliers(0)

    adjacency = D <= eps
    is_core = adjacency.sum(axis=1) >= min_pts
    labels = np.full(n, OUTLIER, dtype=np.int64)
    next_id = 0

    for start in np.flatnonzero(is_core).tolist():
        if labels[start] != OUTLIER:
            continue
        labels[start] = next_id
        queue = deque([start])
        while queue:
            p = queue.popleft()
            for q in np.flatnonzero(adjacency[p] & is_core & (labels == OUTLIER)).tolist():
                labels[q] = next_id
                queue.append(q)
        next_id += 1

    core_index = np.flatnonzero(is_core)
    for i in np.flatnonzero(~is_core).tolist():
        near = core_index[adjacency[i, core_index]]
        if near.shape[0]:
            labels[i] = labels[near[0]]

    assignment = ClusterAssignment.from_labels(labels)
    logger.debug(
        f"DBSCAN n={n} eps={eps} min_pts={min_pts}: "
        f"{assignment.num_clusters} clusters, {assignment.num_outliers} outliers"
    )
    return assignment


class HDBSCANClusterer(Clusterer):
    name = "hdbscan"

    def __init__(
        self, min_cluster_size: int = DEFAULT_MIN_CLUSTER_SIZE, min_samples: Optional[int] = None
    ):
        if min_cluster_size < 2:
            raise ParameterError(f"min_cluster_size must be >= 2, got {min_cluster_size}")
        self.min_cluster_size = min_cluster_size
        self.min_samples = min_samples

    def cluster(self, distances: np.ndarray) -> ClusterAssignment:
        return hdbscan(distances, self.min_cluster_size, self.min_samples)

    def describe(self) -> str:
        samples = self.min_samples or self.min_cluster_size
        return f"hdbscan(min_cluster_size={self.min_cluster_size}, min_samples={samples})"


class DBSCANClusterer(Clusterer):
    name = "dbscan"

    def __init__(self, eps: float = DEFAULT_DBSCAN_EPS, min_pts: int = DEFAULT_DBSCAN_MIN_PTS):
        if eps <= 0 or min_pts < 1:
            raise ParameterError(f"Invalid DBSCAN parameters eps={eps}, min_pts={min_pts}")
        self.eps = eps
        self.min_pts = min_pts

    def cluster(self, distances: np.ndarray) -> ClusterAssignment:
        return dbscan(distances, self.eps, self.min_pts)

    def describe(self) -> str:
        return f"dbscan(eps={self.eps}, min_pts={self.min_pts})"


def sweep_min_cluster_size(
    D, sizes: Iterable[int], min_samples: Optional[int] = None
) -> dict[int, int]:
    """Number of HDBSCAN clusters for each min_cluster_size."""
    D = _as_distance_matrix(D)
    counts = {}
    for size in sizes:
        counts[int(size)] = hdbscan(D, int(size), min_samples).num_clusters
        logger.info(f"min_cluster_size={size}: {counts[int(size)]} clusters")
    return counts


def suggest_min_cluster_size(
    D, sizes: Iterable[int], expected_classes: int, min_samples: Optional[int] = None
) -> int:
    """min_cluster_size whose cluster count is closest to expected_classes.

    Ties go to the smaller size.
    """
    counts = sweep_min_cluster_size(D, sizes, min_samples)
    if not counts:
        raise ParameterError("No min_cluster_size candidates given")
    return min(counts, key=lambda size: (abs(counts[size] - expected_classes), size))
