"""
Tests for GEM pooling, L2 normalization and the desk-scale encoder.

Backward passes are checked against central finite differences (step 1e-6).
"""

import numpy as np
import pytest

FD_STEP = 1e-6


def numeric_grad(func, x, step=FD_STEP):
    """Central differences of a scalar function w.r.t. every entry of x."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        original = x[idx]
        x[idx] = original + step
        plus = func(x)
        x[idx] = original - step
        minus = func(x)
        x[idx] = original
        grad[idx] = (plus - minus) / (2 * step)
    return grad


class TestGemPool:
    """Forward values of generalized-mean pooling."""

    def test_p1_is_average(self):
        from models.encoder import gem_pool

        x = np.array([1.0, 3.0]).reshape(1, 2, 1)
        assert gem_pool(x, [1.0])[0] == pytest.approx(2.0)

    def test_large_p_approaches_max(self):
        from models.encoder import gem_pool

        x = np.array([1.0, 3.0]).reshape(1, 2, 1)
        assert abs(gem_pool(x, [1000.0])[0] - 3.0) < 0.01

    def test_hand_evaluated_p3(self):
        from models.encoder import gem_pool

        x = np.array([1.0, 2.0]).reshape(1, 2, 1)
        assert gem_pool(x, [3.0])[0] == pytest.approx(((1 + 8) / 2) ** (1 / 3))

    def test_limits_on_random_inputs(self):
        from models.encoder import gem_pool

        rng = np.random.default_rng(0)
        for _ in range(50):
            x = rng.uniform(0.1, 10.0, size=(2, 2, 4))
            mean = x.mean(axis=(0, 1))
            peak = x.max(axis=(0, 1))
            assert np.max(np.abs(gem_pool(x, np.ones(4)) - mean)) < 1e-9

            # only the max position is guaranteed to survive: gem >= max * (1/HW)^(1/p)
            high = gem_pool(x, np.full(4, 64.0))
            assert np.all(high <= peak + 1e-12)
            assert np.all(high >= peak * (1 / 4) ** (1 / 64) - 1e-12)
            assert np.all(np.abs(gem_pool(x, np.full(4, 1000.0)) - peak) / peak < 0.01)

    def test_non_decreasing_in_p(self):
        from models.encoder import gem_pool

        rng = np.random.default_rng(1)
        x = rng.uniform(0.0, 5.0, size=(3, 3, 6))
        values = [gem_pool(x, np.full(6, p)) for p in (0.5, 1.0, 2.0, 3.0, 8.0, 32.0)]
        for lower, upper in zip(values, values[1:]):
            assert np.all(upper >= lower - 1e-12)

    def test_shared_exponent_broadcasts(self):
        from models.encoder import gem_pool

        rng = np.random.default_rng(2)
        x = rng.uniform(0.1, 1.0, size=(2, 2, 3))
        np.testing.assert_allclose(gem_pool(x, [2.5]), gem_pool(x, np.full(3, 2.5)))

    def test_feature_tensor_input(self):
        from models.encoder import FeatureTensor, gem_pool

        tensor = FeatureTensor(width=2, height=1, channels=1, values=[1.0, 3.0])
        assert gem_pool(tensor, [1.0])[0] == pytest.approx(2.0)

    def test_feature_tensor_size_checked(self):
        from core.errors import ShapeError
        from models.encoder import FeatureTensor

        with pytest.raises(ShapeError):
            FeatureTensor(width=2, height=2, channels=1, values=[1.0, 2.0])

    def test_negative_input_rejected(self):
        from core.errors import DomainError
        from models.encoder import gem_pool

        with pytest.raises(DomainError):
            gem_pool(np.array([-1.0, 1.0]).reshape(1, 2, 1), [2.0])

    def test_non_positive_exponent_rejected(self):
        from core.errors import DomainError
        from models.encoder import gem_pool

        x = np.ones((1, 2, 1))
        with pytest.raises(DomainError):
            gem_pool(x, [0.0])
        with pytest.raises(DomainError):
            gem_pool(x, [-2.0])


class TestGemPoolBackward:
    """Analytic GEM gradients."""

    def test_matches_finite_differences(self):
        from models.encoder import gem_pool, gem_pool_backward

        rng = np.random.default_rng(3)
        for _ in range(100):
            x = rng.uniform(0.2, 2.0, size=(2, 2, 2, 3))
            p = rng.uniform(1.0, 4.0, size=3)
            g = rng.standard_normal((2, 3))

            grad_x, grad_p = gem_pool_backward(x, p, g)
            num_x = numeric_grad(lambda v: float(np.sum(gem_pool(v, p) * g)), x)
            num_p = numeric_grad(lambda v: float(np.sum(gem_pool(x, v) * g)), p)
            np.testing.assert_allclose(grad_x, num_x, rtol=1e-4, atol=1e-8)
            np.testing.assert_allclose(grad_p, num_p, rtol=1e-4, atol=1e-8)

    def test_shared_exponent_gradient(self):
        from models.encoder import gem_pool, gem_pool_backward

        rng = np.random.default_rng(4)
        x = rng.uniform(0.2, 2.0, size=(3, 2, 4))
        g = rng.standard_normal(4)
        p = np.array([2.5])
        _, grad_p = gem_pool_backward(x, p, g)
        num_p = numeric_grad(lambda v: float(np.sum(gem_pool(x, v) * g)), p)
        assert grad_p.shape == (1,)
        np.testing.assert_allclose(grad_p, num_p, rtol=1e-4, atol=1e-8)

    def test_p1_gradient_is_uniform(self):
        from models.encoder import gem_pool_backward

        rng = np.random.default_rng(5)
        x = rng.uniform(0.1, 3.0, size=(2, 3, 2))
        grad_x, _ = gem_pool_backward(x, np.ones(2), np.ones(2))
        np.testing.assert_allclose(grad_x, np.full(x.shape, 1 / 6))

    def test_symmetric_input_equal_gradients(self):
        from models.encoder import gem_pool_backward

        x = np.full((1, 2, 1), 0.7)
        grad_x, _ = gem_pool_backward(x, [3.0], [1.0])
        assert grad_x[0, 0, 0] == pytest.approx(grad_x[0, 1, 0])

    def test_zero_input_small_p_has_zero_gradient(self):
        from models.encoder import gem_pool_backward

        x = np.array([0.0, 1.0, 2.0, 0.5]).reshape(2, 2, 1)
        grad_x, grad_p = gem_pool_backward(x, [0.5], [1.0])
        assert grad_x[0, 0, 0] == 0.0
        assert np.all(np.isfinite(grad_x))
        assert np.all(np.isfinite(grad_p))

    def test_upstream_shape_checked(self):
        from core.errors import ShapeError
        from models.encoder import gem_pool_backward

        with pytest.raises(ShapeError):
            gem_pool_backward(np.ones((2, 2, 3)), np.ones(3), np.ones(2))


class TestL2Normalize:
    """l2_normalize and its backward."""

    def test_three_four_five(self):
        from models.encoder import l2_normalize

        np.testing.assert_allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8])

    def test_unit_vector_unchanged(self):
        from models.encoder import l2_normalize

        v = np.array([0.0, 1.0, 0.0])
        np.testing.assert_array_equal(l2_normalize(v), v)

    def test_zero_vector_rejected(self):
        from core.errors import DegenerateInputError
        from models.encoder import l2_normalize, l2_normalize_backward

        with pytest.raises(DegenerateInputError):
            l2_normalize(np.zeros(3))
        with pytest.raises(DegenerateInputError):
            l2_normalize_backward(np.zeros(3), np.ones(3))

    def test_backward_matches_finite_differences(self):
        from models.encoder import l2_normalize, l2_normalize_backward

        rng = np.random.default_rng(6)
        for _ in range(100):
            v = rng.standard_normal((3, 5))
            g = rng.standard_normal((3, 5))
            analytic = l2_normalize_backward(v, g)
            numeric = numeric_grad(lambda x: float(np.sum(l2_normalize(x) * g)), v)
            np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8)


def _params(spec, seed=0, **kwargs):
    from models.encoder import init_encoder

    return init_encoder(spec, np.random.default_rng(seed), **kwargs)


class TestEncoder:
    """encoder_forward / encoder_backward / encode_all."""

    def test_identity_weights_keep_unit_input(self):
        from models.encoder import EncoderParams, EncoderSpec, encoder_forward

        params = EncoderParams(spec=EncoderSpec(input_dim=3, output_dim=3), weights=np.eye(3))
        v = np.array([0.6, 0.0, 0.8])
        np.testing.assert_allclose(encoder_forward(params, v), v)

    def test_zero_weights_degenerate(self):
        from core.errors import DegenerateInputError
        from models.encoder import EncoderParams, EncoderSpec, encoder_forward

        params = EncoderParams(
            spec=EncoderSpec(input_dim=3, output_dim=2), weights=np.zeros((3, 2))
        )
        with pytest.raises(DegenerateInputError):
            encoder_forward(params, np.ones(3))

    def test_dimension_mismatch(self):
        from core.errors import ShapeError
        from models.encoder import EncoderSpec, encoder_forward

        params = _params(EncoderSpec(input_dim=4, output_dim=2))
        with pytest.raises(ShapeError):
            encoder_forward(params, np.ones((2, 5)))

    def test_composition_of_pool_and_normalize(self):
        from models.encoder import EncoderSpec, Pooling, encoder_forward, gem_pool, l2_normalize

        spec = EncoderSpec(
            input_dim=2 * 3 * 4, output_dim=5, pooling=Pooling.GEM, tensor_width=3, tensor_height=2
        )
        params = _params(spec)
        x = np.random.default_rng(7).uniform(0.1, 1.0, size=(4, 24))
        expected = l2_normalize(gem_pool(x.reshape(4, 2, 3, 4), params.gem_exponents) @ params.weights)
        np.testing.assert_allclose(encoder_forward(params, x), expected)

    def test_output_has_unit_norm(self):
        from models.encoder import EncoderSpec, encoder_forward

        params = _params(EncoderSpec(input_dim=8, output_dim=4, hidden_dim=6))
        out = encoder_forward(params, np.random.default_rng(8).standard_normal((20, 8)))
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-9)

    def test_gem_init_and_shared_mode(self):
        from models.encoder import EncoderSpec, Pooling

        spec = EncoderSpec(input_dim=12, output_dim=2, pooling=Pooling.GEM, tensor_width=2, tensor_height=2)
        np.testing.assert_array_equal(_params(spec).gem_exponents, np.full(3, 3.0))
        shared = EncoderSpec(
            input_dim=12, output_dim=2, pooling=Pooling.GEM, tensor_width=2, tensor_height=2, gem_shared=True
        )
        assert _params(shared).gem_exponents.shape == (1,)

    def test_input_not_multiple_of_map_area(self):
        from core.errors import ShapeError
        from models.encoder import EncoderSpec, Pooling

        with pytest.raises(ShapeError):
            _params(EncoderSpec(input_dim=10, output_dim=2, pooling=Pooling.GAP, tensor_width=2, tensor_height=2))

    @pytest.mark.parametrize("pooling", ["none", "gem", "gap", "gmp", "gap_gmp"])
    def test_backward_matches_finite_differences(self, pooling):
        from dataclasses import replace

        from models.encoder import EncoderSpec, Pooling, encoder_backward, encoder_forward

        pooling = Pooling(pooling)
        rng = np.random.default_rng(9)
        spec = EncoderSpec(
            input_dim=2 * 2 * 3,
            output_dim=4,
            hidden_dim=5,
            pooling=pooling,
            tensor_width=2,
            tensor_height=2,
        )
        params = _params(spec, seed=10)
        x = rng.uniform(0.2, 2.0, size=(3, 12))
        g = rng.standard_normal((3, 4))

        _, cache = encoder_forward(params, x, return_cache=True)
        grads, grad_inputs = encoder_backward(params, cache, g)

        def loss_for(name):
            def loss(value):
                changed = replace(params, **{name: value})
                return float(np.sum(encoder_forward(changed, x) * g))

            return loss

        for name, array in params.arrays().items():
            np.testing.assert_allclose(
                grads[name], numeric_grad(loss_for(name), array), rtol=1e-4, atol=1e-8
            )
        numeric_x = numeric_grad(lambda v: float(np.sum(encoder_forward(params, v) * g)), x)
        np.testing.assert_allclose(grad_inputs, numeric_x, rtol=1e-4, atol=1e-8)

    def test_encode_all_independent_of_workers(self):
        from models.encoder import EncoderSpec, encode_all

        params = _params(EncoderSpec(input_dim=6, output_dim=3))
        x = np.random.default_rng(11).standard_normal((50, 6))
        single = encode_all(params, x, chunk_size=7, workers=1)
        threaded = encode_all(params, x, chunk_size=7, workers=4)
        np.testing.assert_array_equal(single, threaded)

    def test_encode_all_empty(self):
        from models.encoder import EncoderSpec, encode_all

        params = _params(EncoderSpec(input_dim=6, output_dim=3))
        assert encode_all(params, np.zeros((0, 6))).shape == (0, 3)
