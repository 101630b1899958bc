"""
The clustering-learning epoch loop.

Each epoch: encode every training example -> distances -> pseudo labels
(HDBSCAN by default) -> agents from the weighted centroids -> a fixed number of
ClusterNCE iterations, each followed by an Adam step and momentum updates of the
agents of the classes in the batch -> evaluation.

RNG contract: the trainer owns one generator, default_rng(config.seed). It is
consumed by encoder initialization and then only by the batch sampler, in
iteration order. Its state is part of every checkpoint, so a resumed run draws
exactly the batches an uninterrupted run would have drawn.
"""

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from config import PipelineConfig
from core.clustering import ClusteringMethod, DBSCANClusterer, HDBSCANClusterer
from core.dto.assignment import ClusterAssignment
from core.dto.report import EpochReport
from core.errors import DegenerateInputError, NumericError, ParameterError, ShapeError
from core.evaluation import LabeledEmbeddings, ari, clustering_acc, nmi, weighted_knn_top1
from core.membank import (
    FeatureAgentBank,
    MiniBatch,
    batch_class_mean,
    cluster_nce_loss,
    init_agents,
    momentum_update,
)
from core.neighbors import clustering_distances
from core.ports.clusterer import Clusterer
from core.synth import SynthData
from models.encoder import EncoderParams, encode_all, encoder_backward, encoder_forward, init_encoder
from models.optim import AdamState, adam_step

if TYPE_CHECKING:
    from storage.run_store import Checkpoint, RunStore

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingData:
    """Raw training inputs with optional ground truth and held-out split."""

    inputs: np.ndarray
    labels: Optional[np.ndarray] = None
    test_inputs: Optional[np.ndarray] = None
    test_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[0] < 1:
            raise ShapeError(f"Training inputs must be a non-empty matrix, got {inputs.shape}")
        if not np.all(np.isfinite(inputs)):
            raise NumericError("Training inputs contain non-finite values")
        object.__setattr__(self, "inputs", inputs)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if labels.shape[0] != inputs.shape[0]:
                raise ShapeError(f"{inputs.shape[0]} inputs but {labels.shape[0]} labels")
            object.__setattr__(self, "labels", labels)
        if self.test_inputs is not None:
            test = np.asarray(self.test_inputs, dtype=np.float64).reshape(-1, inputs.shape[1])
            object.__setattr__(self, "test_inputs", test)
            if self.test_labels is not None:
                object.__setattr__(
                    self, "test_labels", np.asarray(self.test_labels, dtype=np.int64).reshape(-1)
                )

    @classmethod
    def from_synth(cls, data: SynthData) -> "TrainingData":
        return cls(
            inputs=data.train_inputs,
            labels=data.train_labels,
            test_inputs=data.test_inputs if data.has_test_split else None,
            test_labels=data.test_labels if data.has_test_split else None,
        )

    @property
    def n(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.inputs.shape[1])

    @property
    def has_test_split(self) -> bool:
        return (
            self.test_inputs is not None
            and self.test_labels is not None
            and self.test_inputs.shape[0] > 0
        )


def build_clusterer(config: PipelineConfig) -> Clusterer:
    if config.clustering is ClusteringMethod.DBSCAN:
        return DBSCANClusterer(eps=config.dbscan_eps, min_pts=config.dbscan_min_pts)
    return HDBSCANClusterer(config.min_cluster_size, config.min_samples or None)


def pseudo_labels(features, config: PipelineConfig) -> ClusterAssignment:
    """Cluster embeddings with the configured distance and algorithm."""
    distances = clustering_distances(
        features, config.distance_kind, config.jaccard_k, workers=config.workers
    )
    return build_clusterer(config).cluster(distances)


def batch_sampler(
    assignment: ClusterAssignment,
    batch_size: int,
    rng: np.random.Generator,
    instances_per_class: int = 4,
) -> np.ndarray:
    """Class-balanced batch of example indices.

    Draws ceil(batch_size / instances_per_class) clusters uniformly (without
    replacement when there are enough), then instances_per_class members of
    each (with replacement when a cluster is smaller), trimmed to batch_size.
    Outliers are never drawn.
    """
    if batch_size < 1 or instances_per_class < 1:
        raise ParameterError(
            f"batch_size and instances_per_class must be >= 1, got {batch_size}, "
            f"{instances_per_class}"
        )
    if assignment.num_clusters == 0:
        raise ParameterError("Cannot sample a batch without any clustered example")

    groups = math.ceil(batch_size / instances_per_class)
    clusters = rng.choice(
        assignment.num_clusters, size=groups, replace=assignment.num_clusters < groups
    )
    parts = []
    for cluster_id in clusters.tolist():
        members = assignment.members(cluster_id)
        parts.append(
            rng.choice(members, size=instances_per_class, replace=members.shape[0] < instances_per_class)
        )
    return np.concatenate(parts)[:batch_size].astype(np.int64)


class Trainer:
    """Encoder, bank and generator of one run, advanced an epoch at a time."""

    def __init__(
        self,
        config: PipelineConfig,
        data: TrainingData,
        params: Optional[EncoderParams] = None,
        rng: Optional[np.random.Generator] = None,
        epoch: int = 0,
    ):
        self.config = config.validate()
        self.data = data
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        if params is None:
            params = init_encoder(
                config.encoder_spec(data.input_dim),
                self.rng,
                gem_init=config.gem_init,
                optimizer_state=AdamState(lr=config.lr, weight_decay=config.weight_decay),
            )
        elif params.spec.input_dim != data.input_dim:
            raise ShapeError(
                f"Encoder expects input_dim {params.spec.input_dim}, data has {data.input_dim}"
            )
        self.params = params
        self.epoch = epoch
        self.bank: Optional[FeatureAgentBank] = None
        self.assignment: Optional[ClusterAssignment] = None
        self.clusterer = build_clusterer(config)
        self._features: Optional[np.ndarray] = None

    @classmethod
    def from_checkpoint(
        cls, config: PipelineConfig, data: TrainingData, checkpoint: "Checkpoint"
    ) -> "Trainer":
        rng = np.random.default_rng()
        rng.bit_generator.state = checkpoint.rng_state
        trainer = cls(config, data, params=checkpoint.params, rng=rng, epoch=checkpoint.epoch)
        trainer.bank = checkpoint.bank
        logger.info(f"Resuming after epoch {checkpoint.epoch}")
        return trainer

    def checkpoint(self) -> "Checkpoint":
        from storage.run_store import Checkpoint

        return Checkpoint(
            epoch=self.epoch,
            params=self.params,
            rng_state=self.rng.bit_generator.state,
            bank=self.bank,
        )

    def encode(self, inputs) -> np.ndarray:
        return encode_all(self.params, inputs, workers=self.config.workers)

    def train_features(self) -> np.ndarray:
        """Training inputs under the current weights, encoded once per weight update."""
        if self._features is None:
            self._features = self.encode(self.data.inputs)
        return self._features

    def run_epoch(self) -> EpochReport:
        """One full cluster-then-train cycle; returns its report."""
        config = self.config
        index = self.epoch
        features = self.train_features()
        distances = clustering_distances(
            features, config.distance_kind, config.jaccard_k, workers=config.workers
        )
        assignment = self.clusterer.cluster(distances)
        self.assignment = assignment

        mean_loss = None
        if assignment.num_clusters == 0:
            logger.warning(f"Epoch {index}: {self.clusterer.describe()} found no clusters, skipping")
            self.bank = None
        else:
            self.bank = init_agents(
                features,
                assignment,
                config.scheme,
                momentum=config.momentum_m,
                temperature=config.loss_temperature,
            )
            losses = [self._train_step(assignment) for _ in range(config.iterations_per_epoch)]
            mean_loss = float(np.mean(losses))

        report = self.evaluate(index, assignment, mean_loss)
        self.epoch += 1
        logger.info(
            f"Epoch {index}: {report.num_clusters} clusters, {report.num_outliers} outliers, "
            f"loss={report.mean_loss}, acc={report.acc}, top1={report.top1}"
        )
        return report

    def _train_step(self, assignment: ClusterAssignment) -> float:
        config = self.config
        indices = batch_sampler(
            assignment, config.batch_size, self.rng, config.instances_per_class
        )
        embeddings, cache = encoder_forward(
            self.params, self.data.inputs[indices], return_cache=True
        )
        batch = MiniBatch(embeddings, assignment.labels[indices])
        loss, grad_embeddings = cluster_nce_loss(batch, self.bank)
        grads, _ = encoder_backward(self.params, cache, grad_embeddings)
        self.params = adam_step(self.params, grads)
        self._features = None

        for k in batch.classes().tolist():
            try:
                momentum_update(self.bank, k, batch_class_mean(batch, k))
            except DegenerateInputError:
                logger.warning(f"Agent {k}: degenerate momentum update skipped")
        logger.debug(f"Step {self.params.optimizer_state.step}: loss={loss:.6f}")
        return loss

    def evaluate(
        self, index: int, assignment: ClusterAssignment, mean_loss: Optional[float] = None
    ) -> EpochReport:
        """Metrics for an assignment under the current encoder.

        ACC/NMI/ARI need truth labels and Top-1 also needs a test split; missing
        metrics are None.
        """
        labels = self.data.labels
        acc = nmi_value = ari_value = top1 = None
        if labels is not None:
            acc = clustering_acc(assignment, labels)
            nmi_value = nmi(assignment, labels)
            ari_value = ari(assignment, labels)
            if self.data.has_test_split:
                top1 = weighted_knn_top1(
                    LabeledEmbeddings(self.train_features(), labels),
                    LabeledEmbeddings(self.encode(self.data.test_inputs), self.data.test_labels),
                    k=self.config.eval_k,
                    temperature=self.config.eval_temperature,
                )
        return EpochReport(
            epoch=index,
            num_clusters=assignment.num_clusters,
            num_outliers=assignment.num_outliers,
            top1=top1,
            acc=acc,
            nmi=nmi_value,
            ari=ari_value,
            mean_loss=mean_loss,
        )


def run_pipeline(
    config: PipelineConfig,
    data: TrainingData,
    store: Optional["RunStore"] = None,
    trainer: Optional[Trainer] = None,
) -> list[EpochReport]:
    """Run epochs until config.epochs are complete.

    With a store, each report is appended as soon as its epoch finishes, a
    checkpoint is written every config.checkpoint_every epochs (0 = never) and
    always once at the end.
    """
    trainer = trainer or Trainer(config, data)
    reports = []
    while trainer.epoch < config.epochs:
        report = trainer.run_epoch()
        reports.append(report)
        if store is None:
            continue
        store.append_report(report)
        if config.checkpoint_every and trainer.epoch % config.checkpoint_every == 0:
            store.save_checkpoint(trainer.checkpoint())
    if store is not None:
        if trainer.assignment is not None:
            store.save_assignment(trainer.assignment)
        store.save_checkpoint(trainer.checkpoint())
    return reports
