"""
Synthetic fine-grained benchmark generator.

Class means sit on the unit sphere with a common pairwise angle; samples are
Gaussian around their mean. A fraction of samples is drawn around the midpoint
of their class mean and the nearest other class mean to mimic the small
inter-class gaps of fine-grained data.

Seed streams: SeedSequence(seed).spawn(3) gives independent generators for
(class means, train split, test split), so the test split never shifts the
train samples.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from core.errors import ParameterError

logger = logging.getLogger(__name__)

DEFAULT_SEPARATION = np.pi / 3
DEFAULT_SPREAD = 0.075
# Allowed slack when checking the equiangular Gram matrix for feasibility
GRAM_TOLERANCE = 1e-10


@dataclass(frozen=True)
class SynthData:
    """Generated splits.

    Attributes:
        train_inputs: (classes * per_class, input_dim)
        train_labels: Class id per train row, class-major order
        test_inputs: (classes * test_per_class, input_dim), possibly empty
        test_labels: Class id per test row
        means: (classes, dim) unit class means
        tensor_shape: (width, height, channels) when rows are flattened feature maps
    """

    train_inputs: np.ndarray
    train_labels: np.ndarray
    test_inputs: np.ndarray
    test_labels: np.ndarray
    means: np.ndarray
    tensor_shape: Optional[tuple[int, int, int]] = None

    @property
    def input_dim(self) -> int:
        return int(self.train_inputs.shape[1])

    @property
    def has_test_split(self) -> bool:
        return self.test_inputs.shape[0] > 0


def equiangular_means(
    classes: int, dim: int, separation: float, rng: np.random.Generator
) -> np.ndarray:
    """Unit vectors with pairwise angle `separation` (radians), randomly oriented.

    Raises:
        ParameterError: if no such configuration exists in `dim` dimensions
    """
    if classes < 1 or dim < 1:
        raise ParameterError(f"classes and dim must be >= 1, got {classes}, {dim}")
    if classes == 1:
        v = rng.standard_normal(dim)
        return (v / np.linalg.norm(v))[None, :]

    rho = float(np.cos(separation))
    if rho < -1.0 / (classes - 1) - GRAM_TOLERANCE:
        max_angle = np.degrees(np.arccos(-1.0 / (classes - 1)))
        raise ParameterError(
            f"{classes} classes cannot be {np.degrees(separation):.2f} degrees apart "
            f"(maximum {max_angle:.2f})"
        )

    gram = (1.0 - rho) * np.eye(classes) + rho * np.ones((classes, classes))
    eigenvalues, eigenvectors = np.linalg.eigh(gram)
    keep = eigenvalues > GRAM_TOLERANCE
    rank = int(np.count_nonzero(keep))
    if rank > dim:
        raise ParameterError(f"Separation needs {rank} dimensions, only {dim} available")

    coords = eigenvectors[:, keep] * np.sqrt(eigenvalues[keep])
    basis, _ = np.linalg.qr(rng.standard_normal((dim, rank)))
    means = coords @ basis.T
    return means / np.linalg.norm(means, axis=1, keepdims=True)


def _blend_partners(means: np.ndarray) -> np.ndarray:
    """Nearest other class mean per class; ties go to the next id cyclically."""
    classes = means.shape[0]
    partners = np.arange(classes)
    if classes == 1:
        return partners
    for c in range(classes):
        order = [(c + offset) % classes for offset in range(1, classes)]
        distances = np.linalg.norm(means[order] - means[c], axis=1)
        partners[c] = order[int(np.argmin(distances))]
    return partners


def _draw_split(
    means: np.ndarray,
    count: int,
    spread: float,
    noise_frac: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    classes, dim = means.shape
    labels = np.repeat(np.arange(classes), count)
    centers = means[labels].copy()
    num_noisy = int(round(noise_frac * labels.shape[0]))
    if num_noisy and classes > 1:
        noisy = rng.choice(labels.shape[0], size=num_noisy, replace=False)
        partners = _blend_partners(means)
        centers[noisy] = 0.5 * (means[labels[noisy]] + means[partners[labels[noisy]]])
    samples = centers + spread * rng.standard_normal((labels.shape[0], dim))
    return samples, labels


def _check_knobs(classes, per_class, dim, spread, noise_frac, test_per_class):
    if classes < 1 or per_class < 1 or dim < 1 or test_per_class < 0:
        raise ParameterError(
            f"Counts must be >= 1 (test_per_class >= 0): classes={classes}, "
            f"per_class={per_class}, dim={dim}, test_per_class={test_per_class}"
        )
    if spread < 0:
        raise ParameterError(f"spread must be >= 0, got {spread}")
    if not 0.0 <= noise_frac <= 1.0:
        raise ParameterError(f"noise_frac must be in [0, 1], got {noise_frac}")


def synth_dataset(
    classes: int,
    per_class: int,
    dim: int,
    separation: float = DEFAULT_SEPARATION,
    spread: float = DEFAULT_SPREAD,
    noise_frac: float = 0.0,
    seed: int = 0,
    test_per_class: int = 0,
) -> SynthData:
    """Gaussian classes around equiangular unit means; raw inputs are the samples."""
    _check_knobs(classes, per_class, dim, spread, noise_frac, test_per_class)
    means_seq, train_seq, test_seq = np.random.SeedSequence(seed).spawn(3)
    means = equiangular_means(classes, dim, separation, np.random.default_rng(means_seq))

    train_x, train_y = _draw_split(
        means, per_class, spread, noise_frac, np.random.default_rng(train_seq)
    )
    test_x, test_y = _draw_split(
        means, test_per_class, spread, noise_frac, np.random.default_rng(test_seq)
    )
    logger.info(
        f"Synthesized {classes} classes x {per_class} (+{test_per_class} test), dim={dim}, "
        f"separation={np.degrees(separation):.1f} deg, spread={spread}, noise={noise_frac}"
    )
    return SynthData(train_x, train_y, test_x, test_y, means)


def _to_feature_maps(
    vectors: np.ndarray, width: int, height: int, spread: float, rng: np.random.Generator
) -> np.ndarray:
    n, channels = vectors.shape
    gains = rng.uniform(0.5, 1.5, size=(n, height, width, 1))
    maps = gains * vectors[:, None, None, :]
    maps = maps + spread * rng.standard_normal((n, height, width, channels))
    return np.maximum(maps, 0.0).reshape(n, height * width * channels)


def synth_feature_maps(
    classes: int,
    per_class: int,
    width: int,
    height: int,
    channels: int,
    separation: float = DEFAULT_SEPARATION,
    spread: float = DEFAULT_SPREAD,
    noise_frac: float = 0.0,
    seed: int = 0,
    test_per_class: int = 0,
) -> SynthData:
    """Non-negative W×H×K activation maps flattened row-major by (h, w, k).

    Each map repeats the class sample over all positions with a random
    per-position gain, adds spatial noise and rectifies.
    """
    if width < 1 or height < 1:
        raise ParameterError(f"Feature map size must be >= 1, got {width}x{height}")
    base = synth_dataset(
        classes, per_class, channels, separation, spread, noise_frac, seed, test_per_class
    )
    maps_seq = np.random.SeedSequence(seed).spawn(4)[3]
    rng = np.random.default_rng(maps_seq)
    train = _to_feature_maps(base.train_inputs, width, height, spread, rng)
    test = _to_feature_maps(base.test_inputs, width, height, spread, rng)
    return SynthData(
        train_inputs=train,
        train_labels=base.train_labels,
        test_inputs=test,
        test_labels=base.test_labels,
        means=base.means,
        tensor_shape=(width, height, channels),
    )


def grid_blob(origin: tuple[float, float], spacing: float, side: int = 5) -> np.ndarray:
    """side×side square lattice of 2-D points starting at origin."""
    steps = np.arange(side) * spacing
    xs, ys = np.meshgrid(steps + origin[0], steps + origin[1], indexing="ij")
    return np.column_stack([xs.reshape(-1), ys.reshape(-1)])


def variable_density_blobs() -> tuple[np.ndarray, np.ndarray]:
    """Two adjacent dense 5×5 lattices plus one distant sparse lattice.

    The dense lattices (spacing 0.02) are 0.12 apart; the sparse one has
    spacing 0.3. No single ε separates the dense pair while keeping the sparse
    lattice together.
    """
    blobs = [
        grid_blob((0.0, 0.0), 0.02),
        grid_blob((0.2, 0.0), 0.02),
        grid_blob((5.0, 5.0), 0.3),
    ]
    points = np.vstack(blobs)
    labels = np.repeat(np.arange(len(blobs)), [b.shape[0] for b in blobs])
    return points, labels
