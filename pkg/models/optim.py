"""
Adam optimizer with decoupled weight decay.

Works on named arrays so the same state serves the linear map, the optional
hidden layer and the GEM exponents. Weight decay is applied directly to the
parameters (not folded into the gradient) and skips the GEM exponents.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from core.errors import NumericError, ShapeError

if TYPE_CHECKING:
    from models.encoder import EncoderParams

logger = logging.getLogger(__name__)

DEFAULT_LR = 0.00035
DEFAULT_WEIGHT_DECAY = 5e-4


@dataclass
class AdamState:
    """Moments and hyperparameters for one parameter set.

    Moments are created lazily (zeros) the first time a name is updated.
    """

    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)
    lr: float = DEFAULT_LR
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    no_decay: tuple[str, ...] = ("gem_exponents",)


def adam_update(
    arrays: dict[str, np.ndarray],
    gradients: dict[str, np.ndarray],
    state: AdamState,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam step over named arrays.

    Validation happens before anything is computed, so a rejected step leaves
    both arrays and state untouched.

    Returns:
        (new arrays, new state); inputs are not modified
    """
    if set(gradients) != set(arrays):
        raise ShapeError(
            f"Gradient names {sorted(gradients)} do not match parameters {sorted(arrays)}"
        )
    for name, theta in arrays.items():
        grad = np.asarray(gradients[name], dtype=np.float64)
        if grad.shape != np.shape(theta):
            raise ShapeError(f"Gradient for {name} has shape {grad.shape}, expected {np.shape(theta)}")
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"Non-finite gradient for {name}")

    t = state.step + 1
    bias1 = 1.0 - state.beta1**t
    bias2 = 1.0 - state.beta2**t
    new_arrays: dict[str, np.ndarray] = {}
    first: dict[str, np.ndarray] = {}
    second: dict[str, np.ndarray] = {}

    for name, theta in arrays.items():
        theta = np.asarray(theta, dtype=np.float64)
        grad = np.asarray(gradients[name], dtype=np.float64)
        m = state.first_moment.get(name, np.zeros_like(theta))
        v = state.second_moment.get(name, np.zeros_like(theta))

        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad

        updated = theta
        if state.weight_decay and name not in state.no_decay:
            updated = updated - state.lr * state.weight_decay * theta
        updated = updated - state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)

        new_arrays[name] = updated
        first[name] = m
        second[name] = v

    new_state = AdamState(
        step=t,
        first_moment=first,
        second_moment=second,
        lr=state.lr,
        weight_decay=state.weight_decay,
        beta1=state.beta1,
        beta2=state.beta2,
        epsilon=state.epsilon,
        no_decay=state.no_decay,
    )
    return new_arrays, new_state


def adam_step(params: "EncoderParams", gradients: dict[str, np.ndarray]) -> "EncoderParams":
    """Apply one Adam update to encoder parameters, returning new parameters."""
    arrays, state = adam_update(params.arrays(), gradients, params.optimizer_state)
    logger.debug(f"Adam step {state.step}")
    return params.with_arrays(arrays, state)
