"""MLP engine tests: forward against a loop oracle, gradients against finite
differences, loss and optimizer arithmetic."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ovcsim.errors import DimensionMismatch, StaleCache
from ovcsim.nn import (
    MLP,
    RmsPropState,
    backward,
    forward,
    forward_cached,
    init_mlp,
    net_from_dict,
    net_to_dict,
    rmsprop_from_dict,
    rmsprop_step,
    rmsprop_to_dict,
    smooth_l1,
)
from tests import oracles


def tiny_net(seed=0, input_dim=4, width=5, output_dim=3, layers=2):
    rng = np.random.default_rng(seed)
    return init_mlp(input_dim, width, output_dim, rng, hidden_layers=layers)


class TestInit:
    def test_shapes_and_glorot_bounds(self):
        net = init_mlp(7, 128, 11, np.random.default_rng(1), hidden_layers=6)
        dims = [7] + [128] * 6 + [11]
        assert [w.shape for w in net.weights] == list(zip(dims[:-1], dims[1:]))
        for w in net.weights:
            bound = np.sqrt(6.0 / sum(w.shape))
            assert np.all(np.abs(w) <= bound)
        assert all(np.all(b == 0.0) for b in net.biases)

    def test_zero_hidden_layers_is_affine(self):
        net = init_mlp(3, 10, 2, np.random.default_rng(0), hidden_layers=0)
        assert net.n_layers == 1
        x = np.array([1.0, -2.0, 0.5])
        assert np.allclose(forward(net, x), x @ net.weights[0] + net.biases[0])

    def test_bad_dims_rejected(self):
        with pytest.raises(ValueError):
            init_mlp(0, 4, 1, np.random.default_rng(0))


class TestForward:
    @pytest.mark.parametrize("layers", [0, 1, 2, 4])
    def test_matches_loop_oracle(self, layers):
        net = tiny_net(seed=layers, layers=layers)
        x = np.random.default_rng(99).normal(size=4)
        expected = oracles.mlp_forward_loops(net.weights, net.biases, x)
        assert np.allclose(forward(net, x), expected, atol=1e-12)

    def test_batch_matches_rows(self):
        net = tiny_net()
        xs = np.random.default_rng(7).normal(size=(6, 4))
        batch = forward(net, xs)
        assert batch.shape == (6, 3)
        for i in range(6):
            assert np.allclose(batch[i], forward(net, xs[i]))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            forward(tiny_net(), np.zeros(9))


class TestBackward:
    @pytest.mark.parametrize("layers", [1, 2, 3])
    def test_weight_gradients_match_finite_differences(self, layers):
        net = tiny_net(seed=10 + layers, layers=layers)
        x = np.random.default_rng(5).normal(size=4)
        upstream = np.array([0.7, -1.3, 0.2])

        _, cache = forward_cached(net, x)
        grads_w, grads_b = backward(net, cache, upstream)

        def objective():
            return float(upstream @ forward(net, x))

        for li in (0, net.n_layers - 1):
            w = net.weights[li]
            for idx in [(0, 0), (w.shape[0] - 1, w.shape[1] - 1)]:
                h = 1e-6
                orig = w[idx]
                w[idx] = orig + h
                up = objective()
                w[idx] = orig - h
                down = objective()
                w[idx] = orig
                assert grads_w[li][idx] == pytest.approx((up - down) / (2 * h), abs=1e-5)
            b = net.biases[li]
            h = 1e-6
            orig = b[0]
            b[0] = orig + h
            up = objective()
            b[0] = orig - h
            down = objective()
            b[0] = orig
            assert grads_b[li][0] == pytest.approx((up - down) / (2 * h), abs=1e-5)

    def test_batch_gradient_is_sum_of_singles(self):
        net = tiny_net()
        xs = np.random.default_rng(3).normal(size=(4, 4))
        upstream = np.random.default_rng(4).normal(size=(4, 3))
        _, cache = forward_cached(net, xs)
        gw_batch, gb_batch = backward(net, cache, upstream)

        gw_sum = [np.zeros_like(w) for w in net.weights]
        gb_sum = [np.zeros_like(b) for b in net.biases]
        for i in range(4):
            _, c = forward_cached(net, xs[i])
            gw, gb = backward(net, c, upstream[i])
            for j in range(net.n_layers):
                gw_sum[j] += gw[j]
                gb_sum[j] += gb[j]
        for j in range(net.n_layers):
            assert np.allclose(gw_batch[j], gw_sum[j], atol=1e-12)
            assert np.allclose(gb_batch[j], gb_sum[j], atol=1e-12)

    def test_stale_cache_rejected(self):
        net = tiny_net()
        _, cache = forward_cached(net, np.zeros(4))
        other = init_mlp(4, 5, 3, np.random.default_rng(0), hidden_layers=5)
        with pytest.raises(StaleCache):
            backward(other, cache, np.zeros(3))


class TestSmoothL1:
    def test_quadratic_region(self):
        loss, grad = smooth_l1(np.array([0.5]), np.array([0.0]))
        assert loss == pytest.approx(0.125)
        assert grad[0] == pytest.approx(0.5)

    def test_linear_region(self):
        loss, grad = smooth_l1(np.array([3.0]), np.array([0.0]))
        assert loss == pytest.approx(2.5)
        assert grad[0] == pytest.approx(1.0)

    def test_continuous_at_kink(self):
        below, _ = smooth_l1(np.array([1.0 - 1e-9]), np.array([0.0]))
        above, _ = smooth_l1(np.array([1.0 + 1e-9]), np.array([0.0]))
        assert below == pytest.approx(above, abs=1e-8)
        assert below == pytest.approx(0.5, abs=1e-8)

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.floats(-5, 5), min_size=1, max_size=8),
        st.lists(st.floats(-5, 5), min_size=1, max_size=8),
    )
    def test_gradient_matches_finite_differences(self, p, t):
        n = min(len(p), len(t))
        pred, target = np.array(p[:n]), np.array(t[:n])
        _, grad = smooth_l1(pred, target)
        fd = oracles.central_difference(lambda v: smooth_l1(v, target)[0], pred)
        assert np.allclose(grad, fd, atol=1e-4)

    def test_nonnegative_and_zero_at_match(self):
        v = np.array([1.0, -2.0, 0.0])
        loss, grad = smooth_l1(v, v)
        assert loss == 0.0
        assert np.all(grad == 0.0)


class TestRmsProp:
    def test_single_step_hand_computed(self):
        net = MLP([np.array([[1.0]])], [np.array([0.0])])
        state = RmsPropState.for_net(net, rho=0.99, eps=1e-8, lr=0.01)
        g = np.array([[2.0]])
        rmsprop_step(net, [g], [np.array([0.0])], state)
        # acc = 0.01 * 4 = 0.04; step = 0.01 * 2 / (0.2 + 1e-8)
        assert state.sq_weights[0][0, 0] == pytest.approx(0.04)
        assert net.weights[0][0, 0] == pytest.approx(1.0 - 0.01 * 2.0 / (0.2 + 1e-8))

    def test_descends_on_quadratic(self):
        net = MLP([np.array([[5.0]])], [np.array([0.0])])
        state = RmsPropState.for_net(net)
        for _ in range(2000):
            w = net.weights[0][0, 0]
            rmsprop_step(net, [np.array([[2.0 * w]])], [np.array([0.0])], state)
        assert abs(net.weights[0][0, 0]) < 0.05


class TestSerialization:
    def test_net_roundtrip(self):
        net = tiny_net(seed=42)
        clone = net_from_dict(net_to_dict(net))
        for a, b in zip(net.parameters(), clone.parameters()):
            assert np.array_equal(a, b)

    def test_rmsprop_roundtrip(self):
        net = tiny_net(seed=42)
        state = RmsPropState.for_net(net, rho=0.9, eps=1e-6, lr=0.5)
        state.sq_weights[0][0, 0] = 3.25
        restored = rmsprop_from_dict(rmsprop_to_dict(state), net)
        assert restored.rho == 0.9 and restored.lr == 0.5
        assert restored.sq_weights[0][0, 0] == 3.25

    def test_clone_is_independent(self):
        net = tiny_net()
        clone = net.clone()
        net.weights[0][0, 0] += 1.0
        assert clone.weights[0][0, 0] != net.weights[0][0, 0]
