"""
Desk-scale differentiable encoder.

A pooling stage (GEM / GAP / GMP / GAP+GMP, or none for plain vectors), an
optional tanh hidden layer, a linear map and L2 normalization. Every stage has
an analytic backward pass so the clustering-learning loop can train the encoder
with Adam without an autodiff framework.

Shapes:
    feature tensors are (..., H, W, K), flattened row-major by (h, w, k)
    encoder inputs are (B, input_dim) rows or a single 1-D row
    embeddings are (B, output_dim), unit L2 norm per row
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from core.errors import DegenerateInputError, DomainError, ParameterError, ShapeError
from models.optim import AdamState

logger = logging.getLogger(__name__)

# Inputs are clamped to this floor before fractional powers
GEM_CLAMP = 1e-12

# Learned exponents are kept at or above this value after every update
GEM_MIN_EXPONENT = 1e-2

ENCODE_CHUNK_SIZE = 256


class Pooling(Enum):
    """Spatial pooling applied before the linear map."""

    NONE = "none"
    GEM = "gem"
    GAP = "gap"
    GMP = "gmp"
    GAP_GMP = "gap_gmp"


@dataclass(frozen=True)
class FeatureTensor:
    """A W×H×K activation map stored row-major by (h, w, k)."""

    width: int
    height: int
    channels: int
    values: np.ndarray

    def __post_init__(self):
        expected = self.width * self.height * self.channels
        if np.asarray(self.values).size != expected:
            raise ShapeError(
                f"FeatureTensor {self.width}x{self.height}x{self.channels} "
                f"needs {expected} values, got {np.asarray(self.values).size}"
            )

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64).reshape(
            self.height, self.width, self.channels
        )


def _as_spatial(tensor) -> np.ndarray:
    if isinstance(tensor, FeatureTensor):
        return tensor.as_array()
    x = np.asarray(tensor, dtype=np.float64)
    if x.ndim < 3:
        raise ShapeError(f"Feature tensor needs (..., H, W, K) shape, got {x.shape}")
    return x


def _check_exponents(exponents, channels: int) -> np.ndarray:
    p = np.atleast_1d(np.asarray(exponents, dtype=np.float64))
    if p.ndim != 1 or p.shape[0] not in (1, channels):
        raise ShapeError(f"Expected 1 or {channels} GEM exponents, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p <= 0):
        raise DomainError(f"GEM exponents must be finite and > 0, got {p}")
    return np.broadcast_to(p, (channels,))


def _check_tensor(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise DomainError("Feature tensor contains non-finite values")
    if np.any(x < 0):
        raise DomainError("GEM pooling requires non-negative inputs")


def gem_pool(tensor, exponents) -> np.ndarray:
    """Generalized-mean pooling over the spatial axes.

    f(k) = (mean_{h,w} x[h,w,k] ** p(k)) ** (1 / p(k))

    p = 1 is average pooling; p -> inf approaches max pooling. Evaluated as
    max * mean((x / max) ** p) ** (1 / p) so large exponents do not overflow.

    Args:
        tensor: FeatureTensor or array of shape (..., H, W, K), values >= 0
        exponents: Scalar, length-1 (shared) or length-K per-channel exponents

    Returns:
        Array of shape (..., K), not normalized
    """
    x = _as_spatial(tensor)
    _check_tensor(x)
    p = _check_exponents(exponents, x.shape[-1])

    xc = np.maximum(x, GEM_CLAMP)
    peak = xc.max(axis=(-3, -2), keepdims=True)
    scaled_mean = ((xc / peak) ** p).mean(axis=(-3, -2))
    return peak[..., 0, 0, :] * scaled_mean ** (1.0 / p)


def gem_pool_backward(tensor, exponents, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of gem_pool w.r.t. its inputs and exponents.

    At an input of exactly 0 with p < 1 the x-gradient is defined as 0.

    Args:
        tensor: Same input as gem_pool
        exponents: Same exponents as gem_pool (shared or per-channel)
        upstream: dL/df, shape (..., K)

    Returns:
        (grad_tensor with the tensor's shape, grad_exponents with the exponents'
        length; batch dimensions are summed into the exponent gradient)
    """
    x = _as_spatial(tensor)
    _check_tensor(x)
    raw_p = np.atleast_1d(np.asarray(exponents, dtype=np.float64))
    p = _check_exponents(raw_p, x.shape[-1])
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != x.shape[:-3] + x.shape[-1:]:
        raise ShapeError(f"Upstream gradient shape {g.shape} does not match pooled output")

    spatial = x.shape[-3] * x.shape[-2]
    xc = np.maximum(x, GEM_CLAMP)
    peak = xc.max(axis=(-3, -2), keepdims=True)
    s = xc / peak
    s_pow = s**p
    mean_pow = s_pow.mean(axis=(-3, -2), keepdims=True)
    pooled = peak * mean_pow ** (1.0 / p)

    grad_x = mean_pow ** (1.0 / p - 1.0) * s ** (p - 1.0) / spatial
    grad_x = np.where((x == 0) & (p < 1.0), 0.0, grad_x)
    grad_x = grad_x * g[..., None, None, :]

    mean_pow_log = (s_pow * np.log(s)).mean(axis=(-3, -2), keepdims=True)
    dpooled_dp = pooled * (-np.log(mean_pow) / p**2 + mean_pow_log / (p * mean_pow))
    grad_p = (dpooled_dp[..., 0, 0, :] * g).reshape(-1, x.shape[-1]).sum(axis=0)
    if raw_p.shape[0] == 1:
        grad_p = grad_p.sum(keepdims=True)
    return grad_x, grad_p


def l2_normalize(v) -> np.ndarray:
    """Scale each row (last axis) to unit Euclidean norm."""
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise DegenerateInputError("Cannot L2-normalize a zero or non-finite vector")
    return v / norms


def l2_normalize_backward(v, upstream) -> np.ndarray:
    """Backward of l2_normalize: (I - z zᵀ) g / ‖v‖ per row."""
    v = np.asarray(v, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateInputError("Cannot differentiate normalization at a zero vector")
    z = v / norms
    return (g - z * np.sum(z * g, axis=-1, keepdims=True)) / norms


@dataclass(frozen=True)
class EncoderSpec:
    """Architecture of the desk-scale encoder.

    Attributes:
        input_dim: Width of one flattened input row
        output_dim: Embedding dimension
        hidden_dim: Width of the optional tanh layer (0 = no hidden layer)
        pooling: Pooling stage; NONE treats rows as plain vectors
        tensor_width: W of the feature map when pooling is used
        tensor_height: H of the feature map when pooling is used
        gem_shared: One exponent shared by all channels instead of one per channel
    """

    input_dim: int
    output_dim: int
    hidden_dim: int = 0
    pooling: Pooling = Pooling.NONE
    tensor_width: int = 1
    tensor_height: int = 1
    gem_shared: bool = False

    @property
    def channels(self) -> int:
        if self.pooling is Pooling.NONE:
            return self.input_dim
        return self.input_dim // (self.tensor_width * self.tensor_height)

    @property
    def pooled_dim(self) -> int:
        if self.pooling is Pooling.GAP_GMP:
            return 2 * self.channels
        return self.channels

    def validate(self) -> None:
        if self.input_dim < 1 or self.output_dim < 1 or self.hidden_dim < 0:
            raise ParameterError(f"Invalid encoder dimensions: {self}")
        if self.pooling is not Pooling.NONE:
            area = self.tensor_width * self.tensor_height
            if self.tensor_width < 1 or self.tensor_height < 1 or self.input_dim % area:
                raise ShapeError(
                    f"input_dim {self.input_dim} is not a multiple of "
                    f"{self.tensor_width}x{self.tensor_height}"
                )


@dataclass
class EncoderParams:
    """Trainable encoder state.

    `weights` maps the (hidden or pooled) representation to the embedding and is
    laid out d_in × d_out, i.e. y = x @ weights.
    """

    spec: EncoderSpec
    weights: np.ndarray
    hidden_weights: Optional[np.ndarray] = None
    gem_exponents: Optional[np.ndarray] = None
    optimizer_state: AdamState = field(default_factory=AdamState)

    def arrays(self) -> dict[str, np.ndarray]:
        """Trainable arrays by name (the unit Adam works on)."""
        result = {"weights": self.weights}
        if self.hidden_weights is not None:
            result["hidden_weights"] = self.hidden_weights
        if self.gem_exponents is not None:
            result["gem_exponents"] = self.gem_exponents
        return result

    def with_arrays(self, arrays: dict[str, np.ndarray], state: AdamState) -> "EncoderParams":
        gem_exponents = arrays.get("gem_exponents")
        if gem_exponents is not None:
            gem_exponents = np.maximum(gem_exponents, GEM_MIN_EXPONENT)
        return replace(
            self,
            weights=arrays["weights"],
            hidden_weights=arrays.get("hidden_weights"),
            gem_exponents=gem_exponents,
            optimizer_state=state,
        )


def init_encoder(
    spec: EncoderSpec,
    rng: np.random.Generator,
    gem_init: float = 3.0,
    optimizer_state: Optional[AdamState] = None,
) -> EncoderParams:
    """Random Gaussian weights with variance 1/fan_in; GEM exponents at gem_init."""
    spec.validate()
    hidden_weights = None
    fan_in = spec.pooled_dim
    if spec.hidden_dim > 0:
        hidden_weights = rng.standard_normal((spec.pooled_dim, spec.hidden_dim)) / np.sqrt(fan_in)
        fan_in = spec.hidden_dim
    weights = rng.standard_normal((fan_in, spec.output_dim)) / np.sqrt(fan_in)

    gem_exponents = None
    if spec.pooling is Pooling.GEM:
        if gem_init <= 0:
            raise DomainError(f"gem_init must be > 0, got {gem_init}")
        count = 1 if spec.gem_shared else spec.channels
        gem_exponents = np.full(count, float(gem_init))

    return EncoderParams(
        spec=spec,
        weights=weights,
        hidden_weights=hidden_weights,
        gem_exponents=gem_exponents,
        optimizer_state=optimizer_state or AdamState(),
    )


@dataclass
class ForwardCache:
    """Intermediates kept by encoder_forward for the backward pass."""

    inputs: np.ndarray
    pooled: np.ndarray
    hidden: Optional[np.ndarray]
    projected: np.ndarray
    embeddings: np.ndarray


def _spatial_view(params: EncoderParams, x: np.ndarray) -> np.ndarray:
    spec = params.spec
    return x.reshape(x.shape[0], spec.tensor_height, spec.tensor_width, spec.channels)


def _pool(params: EncoderParams, x: np.ndarray) -> np.ndarray:
    pooling = params.spec.pooling
    if pooling is Pooling.NONE:
        return x
    t = _spatial_view(params, x)
    if pooling is Pooling.GEM:
        return gem_pool(t, params.gem_exponents)
    if pooling is Pooling.GAP:
        return t.mean(axis=(1, 2))
    if pooling is Pooling.GMP:
        return t.max(axis=(1, 2))
    return np.concatenate([t.mean(axis=(1, 2)), t.max(axis=(1, 2))], axis=1)


def _max_pool_backward(t: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    # route to the first maximal position of each channel
    b, h, w, k = t.shape
    flat = t.reshape(b, h * w, k)
    winners = flat.argmax(axis=1)
    grad = np.zeros_like(flat)
    np.put_along_axis(grad, winners[:, None, :], upstream[:, None, :], axis=1)
    return grad.reshape(b, h, w, k)


def _pool_backward(params: EncoderParams, x: np.ndarray, upstream: np.ndarray):
    pooling = params.spec.pooling
    if pooling is Pooling.NONE:
        return upstream, None
    t = _spatial_view(params, x)
    area = t.shape[1] * t.shape[2]
    k = params.spec.channels
    if pooling is Pooling.GEM:
        grad_t, grad_p = gem_pool_backward(t, params.gem_exponents, upstream)
        return grad_t.reshape(x.shape), grad_p
    if pooling is Pooling.GAP:
        grad_t = np.broadcast_to(upstream[:, None, None, :] / area, t.shape)
    elif pooling is Pooling.GMP:
        grad_t = _max_pool_backward(t, upstream)
    else:
        grad_t = np.broadcast_to(upstream[:, None, None, :k] / area, t.shape)
        grad_t = grad_t + _max_pool_backward(t, upstream[:, k:])
    return np.array(grad_t).reshape(x.shape), None


def encoder_forward(params: EncoderParams, inputs, return_cache: bool = False):
    """Embed rows of raw vectors (or flattened feature tensors).

    Returns unit-norm embeddings; with return_cache=True returns
    (embeddings, ForwardCache). A 1-D input returns a 1-D embedding.
    """
    if isinstance(inputs, FeatureTensor):
        inputs = np.asarray(inputs.values, dtype=np.float64).reshape(-1)
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise ShapeError(
            f"Encoder expects rows of width {params.spec.input_dim}, got shape {x.shape}"
        )

    pooled = _pool(params, x)
    hidden = None
    if params.hidden_weights is not None:
        hidden = np.tanh(pooled @ params.hidden_weights)
        projected = hidden @ params.weights
    else:
        projected = pooled @ params.weights
    embeddings = l2_normalize(projected)

    out = embeddings[0] if single else embeddings
    if not return_cache:
        return out
    return out, ForwardCache(x, pooled, hidden, projected, embeddings)


def encoder_backward(
    params: EncoderParams, cache: ForwardCache, grad_embeddings
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Backpropagate dL/d(embeddings) through the encoder.

    Returns:
        (gradients keyed like params.arrays(), gradient w.r.t. the inputs)
    """
    g = np.asarray(grad_embeddings, dtype=np.float64).reshape(cache.embeddings.shape)
    grad_projected = l2_normalize_backward(cache.projected, g)

    grads: dict[str, np.ndarray] = {}
    if cache.hidden is not None:
        grads["weights"] = cache.hidden.T @ grad_projected
        grad_hidden = grad_projected @ params.weights.T
        grad_pre = grad_hidden * (1.0 - cache.hidden**2)
        grads["hidden_weights"] = cache.pooled.T @ grad_pre
        grad_pooled = grad_pre @ params.hidden_weights.T
    else:
        grads["weights"] = cache.pooled.T @ grad_projected
        grad_pooled = grad_projected @ params.weights.T

    grad_inputs, grad_p = _pool_backward(params, cache.inputs, grad_pooled)
    if params.gem_exponents is not None:
        grads["gem_exponents"] = grad_p
    return grads, grad_inputs


def encode_all(
    params: EncoderParams, inputs, chunk_size: int = ENCODE_CHUNK_SIZE, workers: int = 1
) -> np.ndarray:
    """Embed a full matrix in fixed-size row chunks.

    Chunk boundaries depend only on chunk_size, never on the worker count, so the
    result is bitwise identical for any number of workers.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"encode_all expects a 2-D matrix, got shape {x.shape}")
    if x.shape[0] == 0:
        return np.zeros((0, params.spec.output_dim))
    chunks = [x[start : start + chunk_size] for start in range(0, x.shape[0], chunk_size)]
    if workers <= 1 or len(chunks) == 1:
        parts = [encoder_forward(params, chunk) for chunk in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda chunk: encoder_forward(params, chunk), chunks))
    logger.debug(f"Encoded {x.shape[0]} rows in {len(chunks)} chunks")
    return np.vstack(parts)
