"""
Tests for Adam with decoupled weight decay.
"""

import numpy as np
import pytest


class TestAdamUpdate:
    """adam_update on named arrays."""

    def test_zero_gradient_without_decay_is_noop(self):
        from models.optim import AdamState, adam_update

        arrays = {"weights": np.array([[1.0, -2.0], [0.5, 3.0]])}
        new, state = adam_update(arrays, {"weights": np.zeros((2, 2))}, AdamState(weight_decay=0.0))
        np.testing.assert_array_equal(new["weights"], arrays["weights"])
        assert state.step == 1

    def test_scalar_step_matches_hand_computation(self):
        from models.optim import AdamState, adam_update

        state = AdamState(lr=0.1, weight_decay=0.0)
        new, state = adam_update({"w": np.array([1.0])}, {"w": np.array([0.5])}, state)

        m = 0.1 * 0.5
        v = 0.001 * 0.25
        m_hat = m / (1 - 0.9)
        v_hat = v / (1 - 0.999)
        expected = 1.0 - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
        assert new["w"][0] == pytest.approx(expected, rel=1e-12)
        assert state.first_moment["w"][0] == pytest.approx(m)
        assert state.second_moment["w"][0] == pytest.approx(v)

    def test_decay_is_decoupled_and_skips_exponents(self):
        from models.optim import AdamState, adam_update

        arrays = {"weights": np.array([2.0]), "gem_exponents": np.array([3.0])}
        zeros = {"weights": np.zeros(1), "gem_exponents": np.zeros(1)}
        new, _ = adam_update(arrays, zeros, AdamState(lr=0.1, weight_decay=0.5))
        assert new["weights"][0] == pytest.approx(2.0 * (1 - 0.1 * 0.5))
        assert new["gem_exponents"][0] == 3.0

    def test_non_finite_gradient_rejected(self):
        from core.errors import NumericError
        from models.optim import AdamState, adam_update

        arrays = {"w": np.array([1.0, 2.0])}
        state = AdamState()
        with pytest.raises(NumericError):
            adam_update(arrays, {"w": np.array([np.nan, 0.0])}, state)
        assert state.step == 0
        assert state.first_moment == {}
        np.testing.assert_array_equal(arrays["w"], [1.0, 2.0])

    def test_gradient_shape_checked(self):
        from core.errors import ShapeError
        from models.optim import AdamState, adam_update

        with pytest.raises(ShapeError):
            adam_update({"w": np.ones(3)}, {"w": np.ones(2)}, AdamState())
        with pytest.raises(ShapeError):
            adam_update({"w": np.ones(3)}, {"v": np.ones(3)}, AdamState())

    def test_deterministic(self):
        from models.optim import AdamState, adam_update

        rng = np.random.default_rng(0)
        arrays = {"w": rng.standard_normal((3, 3))}
        grads = {"w": rng.standard_normal((3, 3))}
        first, _ = adam_update(arrays, grads, AdamState())
        second, _ = adam_update(arrays, grads, AdamState())
        np.testing.assert_array_equal(first["w"], second["w"])

    def test_second_moment_non_negative(self):
        from models.optim import AdamState, adam_update

        rng = np.random.default_rng(1)
        arrays = {"w": rng.standard_normal(5)}
        state = AdamState()
        for _ in range(5):
            arrays, state = adam_update(arrays, {"w": rng.standard_normal(5)}, state)
        assert state.step == 5
        assert np.all(state.second_moment["w"] >= 0)


class TestAdamStep:
    """adam_step on encoder parameters."""

    def test_published_defaults(self):
        from models.optim import AdamState

        state = AdamState()
        assert state.lr == 0.00035
        assert state.weight_decay == 5e-4

    def test_exponents_clamped_after_update(self):
        from models.encoder import EncoderSpec, Pooling, init_encoder
        from models.optim import AdamState, adam_step

        spec = EncoderSpec(input_dim=4, output_dim=2, pooling=Pooling.GEM, tensor_width=2, tensor_height=1)
        params = init_encoder(
            spec, np.random.default_rng(0), gem_init=0.02, optimizer_state=AdamState(lr=1.0)
        )
        grads = {"weights": np.zeros_like(params.weights), "gem_exponents": np.ones(2)}
        updated = adam_step(params, grads)
        np.testing.assert_array_equal(updated.gem_exponents, [0.01, 0.01])
        assert updated.optimizer_state.step == 1
        assert params.optimizer_state.step == 0
