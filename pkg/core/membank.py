"""
Feature-agent memory bank and the ClusterNCE loss.

One agent per pseudo-label cluster. Agents start as weighted centroids of the
cluster's embeddings, where each member's weight is a softmax over its distance
to the rest of the cluster, and afterwards follow the mini-batch class means
through a momentum update. Agents are kept at unit length throughout.

ClusterNCE scores the renormalized mean of every class present in a batch
against all agents (inner product / τ) with softmax cross-entropy; agents are
constants for the gradient.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import logsumexp, softmax

from core.dto.assignment import OUTLIER, ClusterAssignment
from core.errors import (
    DegenerateInputError,
    LookupFailedError,
    ParameterError,
    ShapeError,
)
from core.neighbors import pairwise_euclidean
from models.encoder import l2_normalize, l2_normalize_backward

logger = logging.getLogger(__name__)

DEFAULT_MOMENTUM = 0.1
DEFAULT_LOSS_TEMPERATURE = 0.05


class WeightKind(Enum):
    """How a member's distance to the rest of its cluster is measured."""

    ZERO = "zero"  # uniform weights
    MIN = "min"
    MEAN = "mean"


class WeightSign(Enum):
    """exp(+d) favours isolated members, exp(-d) favours central ones."""

    AS_WRITTEN = "as_written"
    INVERTED = "inverted"


@dataclass(frozen=True)
class WeightScheme:
    kind: WeightKind = WeightKind.MEAN
    sign: WeightSign = WeightSign.AS_WRITTEN

    @property
    def factor(self) -> float:
        return 1.0 if self.sign is WeightSign.AS_WRITTEN else -1.0

    def __str__(self) -> str:
        return f"{self.kind.value}/{self.sign.value}"


@dataclass(frozen=True)
class MiniBatch:
    """Unit-norm features with their (non-outlier) pseudo labels."""

    features: np.ndarray
    pseudo_labels: np.ndarray

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.pseudo_labels, dtype=np.int64).reshape(-1)
        if features.ndim != 2 or features.shape[0] != labels.shape[0]:
            raise ShapeError(
                f"MiniBatch needs one label per feature row, got {features.shape} "
                f"and {labels.shape[0]} labels"
            )
        if np.any(labels == OUTLIER) or np.any(labels < 0):
            raise ParameterError("MiniBatch cannot contain outliers")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "pseudo_labels", labels)

    def __len__(self) -> int:
        return int(self.pseudo_labels.shape[0])

    def classes(self) -> np.ndarray:
        """Distinct labels present, ascending."""
        return np.unique(self.pseudo_labels)


@dataclass
class FeatureAgentBank:
    """Unit-norm agents c_k, momentum m and loss temperature τ.

    Mutable: momentum_update writes agents in place.
    """

    agents: np.ndarray
    momentum: float = DEFAULT_MOMENTUM
    temperature: float = DEFAULT_LOSS_TEMPERATURE

    def __post_init__(self):
        if not 0.0 <= self.momentum <= 1.0:
            raise ParameterError(f"momentum must be in [0, 1], got {self.momentum}")
        if self.temperature <= 0:
            raise ParameterError(f"temperature must be > 0, got {self.temperature}")
        self.agents = np.asarray(self.agents, dtype=np.float64)

    @property
    def num_agents(self) -> int:
        return int(self.agents.shape[0])

    @property
    def dim(self) -> int:
        return int(self.agents.shape[1])


def _check_members(features) -> np.ndarray:
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] < 1:
        raise ShapeError(f"Cluster feature set must be a non-empty matrix, got {F.shape}")
    return F


def _member_distances(F: np.ndarray, kind: WeightKind) -> np.ndarray:
    n = F.shape[0]
    if kind is WeightKind.ZERO or n == 1:
        return np.zeros(n)
    D = pairwise_euclidean(F)
    if kind is WeightKind.MIN:
        np.fill_diagonal(D, np.inf)
        return D.min(axis=1)
    return D.sum(axis=1) / (n - 1)


def pairwise_set_distance(i: int, members, scheme: WeightScheme) -> float:
    """Distance of member i to the rest of its cluster under the scheme.

    zero -> 0; min / mean -> min / mean Euclidean distance over the other
    members; a singleton is 0 under every scheme.
    """
    F = _check_members(members)
    if not 0 <= i < F.shape[0]:
        raise LookupFailedError(f"Member index {i} out of range for {F.shape[0]} members")
    if scheme.kind is WeightKind.ZERO or F.shape[0] == 1:
        return 0.0
    others = np.delete(F, i, axis=0)
    d = np.linalg.norm(others - F[i], axis=1)
    return float(d.min() if scheme.kind is WeightKind.MIN else d.mean())


def compute_weights(members, scheme: WeightScheme) -> np.ndarray:
    """Softmax of ±(member distance) over one cluster."""
    F = _check_members(members)
    return softmax(scheme.factor * _member_distances(F, scheme.kind))


def init_agents(
    features,
    assignment: ClusterAssignment,
    scheme: WeightScheme = WeightScheme(),
    momentum: float = DEFAULT_MOMENTUM,
    temperature: float = DEFAULT_LOSS_TEMPERATURE,
) -> FeatureAgentBank:
    """One agent per cluster: normalize(Σ_i w_i f_i). Outliers are ignored."""
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] != len(assignment):
        raise ShapeError(
            f"Assignment covers {len(assignment)} examples, features have shape {F.shape}"
        )
    agents = np.zeros((assignment.num_clusters, F.shape[1]))
    for k in range(assignment.num_clusters):
        members = assignment.members(k)
        if members.shape[0] == 0:
            raise DegenerateInputError(f"Cluster {k} has no members")
        weights = compute_weights(F[members], scheme)
        agents[k] = l2_normalize(weights @ F[members])
    logger.debug(f"Initialized {assignment.num_clusters} agents with {scheme} weights")
    return FeatureAgentBank(agents=agents, momentum=momentum, temperature=temperature)


def batch_class_mean(batch: MiniBatch, k: int) -> np.ndarray:
    """Plain mean of the batch features labelled k (not renormalized)."""
    mask = batch.pseudo_labels == k
    if not np.any(mask):
        raise LookupFailedError(f"Label {k} not present in batch")
    return batch.features[mask].mean(axis=0)


def momentum_update(bank: FeatureAgentBank, k: int, class_mean) -> FeatureAgentBank:
    """c_k <- normalize(m c_k + (1 - m) f̄_k), in place.

    Raises DegenerateInputError (leaving c_k untouched) if the blend is zero.
    """
    if not 0 <= k < bank.num_agents:
        raise LookupFailedError(f"Cluster {k} not in bank of {bank.num_agents} agents")
    fbar = np.asarray(class_mean, dtype=np.float64)
    if fbar.shape != (bank.dim,):
        raise ShapeError(f"Class mean has shape {fbar.shape}, expected ({bank.dim},)")
    blended = bank.momentum * bank.agents[k] + (1.0 - bank.momentum) * fbar
    bank.agents[k] = l2_normalize(blended)
    return bank


def cluster_nce_loss(batch: MiniBatch, bank: FeatureAgentBank) -> tuple[float, np.ndarray]:
    """ClusterNCE loss and its gradient w.r.t. the batch features.

    For every class k in the batch, q_k = normalize(mean of its features) and
    loss_k = logsumexp_j(q_k·c_j / τ) - q_k·c_k / τ. The loss is the mean over
    classes present; the gradient has the shape of batch.features.
    """
    if bank.temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {bank.temperature}")
    if len(batch) == 0:
        raise ShapeError("Cannot compute the loss of an empty batch")
    if batch.features.shape[1] != bank.dim:
        raise ShapeError(
            f"Batch features have dim {batch.features.shape[1]}, bank has {bank.dim}"
        )
    if np.any(batch.pseudo_labels >= bank.num_agents):
        missing = sorted(set(batch.pseudo_labels.tolist()) - set(range(bank.num_agents)))
        raise LookupFailedError(f"Batch labels {missing} have no agent")

    tau = bank.temperature
    classes = batch.classes()
    grads = np.zeros_like(batch.features)
    total = 0.0
    for k in classes.tolist():
        mask = batch.pseudo_labels == k
        mean = batch.features[mask].mean(axis=0)
        query = l2_normalize(mean)
        logits = bank.agents @ query / tau
        total += float(logsumexp(logits) - logits[k])

        probs = softmax(logits)
        grad_query = (probs @ bank.agents - bank.agents[k]) / tau
        grads[mask] += l2_normalize_backward(mean, grad_query) / np.count_nonzero(mask)

    count = classes.shape[0]
    return total / count, grads / count
