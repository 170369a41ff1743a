import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alignlab.network import (
    NetworkSpec, ParamSet, backprop_grads, backward_deltas, cnn, forward,
    init_params, mlp, output_errors, snapshot,
)
from alignlab.rng import make_rng
from helpers import conv2d_reference, fd_param_grads, rel_err, straight_line_forward


class TestInit:
    def test_empty_spec_rejected(self):
        with pytest.raises(ValueError):
            NetworkSpec(())

    def test_deterministic(self):
        spec = mlp(4, [], 4)
        a = init_params(spec, make_rng(42))
        b = init_params(spec, make_rng(42))
        assert np.array_equal(a.weights[0], b.weights[0])

    def test_standard_normal_draw(self):
        spec = mlp(1024, [], 1024)
        p = init_params(spec, make_rng(0))
        w = p.weights[0]
        assert abs(w.mean()) < 0.1
        assert abs(w.var() - 1.0) < 0.1
        assert np.all(p.biases[0] == 0)


class TestForward:
    def test_zero_params(self):
        spec = mlp(3, [5], 2)
        p = init_params(spec, make_rng(0))
        for w in p.weights:
            w[:] = 0.0
        x = np.random.default_rng(1).standard_normal((4, 3))
        assert np.all(forward(p, spec, x).f == 0.0)

    def test_single_layer_by_hand(self):
        spec = mlp(1, [], 1, activation="identity")
        p = ParamSet([np.array([[2.0]])], [np.array([1.0])])
        out = forward(p, spec, np.array([[3.0]])).f
        assert out[0, 0] == pytest.approx(7.0)

    def test_matches_straight_line_oracle(self, rng):
        spec = mlp(5, [4, 4], 3, activation="relu")
        p = init_params(spec, make_rng(7))
        x = rng.standard_normal((6, 5))
        f = forward(p, spec, x).f
        ref = straight_line_forward(p, spec, x)
        np.testing.assert_allclose(f, ref, atol=1e-12)

    def test_shape_mismatch(self):
        spec = mlp(5, [4], 3)
        p = init_params(spec, make_rng(0))
        with pytest.raises(ValueError):
            forward(p, spec, np.zeros((2, 6)))

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_forward_deterministic(self, seed):
        spec = mlp(3, [4], 2, activation="tanh")
        p = init_params(spec, make_rng(seed))
        x = make_rng(seed, 1).standard_normal((2, 3))
        f1 = forward(p, spec, x).f
        f2 = forward(p, spec, x).f
        assert np.array_equal(f1, f2)

    def test_first_layer_linear_in_w(self, rng):
        spec = mlp(4, [6], 2, activation="tanh")
        p = init_params(spec, make_rng(3))
        x = rng.standard_normal((3, 4))
        z1 = forward(p, spec, x).zs[0]
        p.weights[0] *= 2.5
        z1_scaled = forward(p, spec, x).zs[0]
        np.testing.assert_allclose(z1_scaled - p.biases[0], 2.5 * (z1 - p.biases[0]),
                                   rtol=1e-12)


class TestBackprop:
    def test_zero_error_gives_zero_grads(self, rng):
        spec = mlp(3, [4], 2, activation="tanh")
        p = init_params(spec, make_rng(5))
        x = rng.standard_normal((4, 3))
        y = forward(p, spec, x).f
        grads = backprop_grads(p, spec, x, y)
        for dw, db in grads:
            assert np.all(dw == 0.0)
            assert np.all(db == 0.0)

    def test_matches_finite_differences(self, rng):
        spec = mlp(3, [4], 2, activation="tanh")
        p = init_params(spec, make_rng(9))
        x = rng.standard_normal((5, 3))
        y = rng.standard_normal((5, 2))
        grads = backprop_grads(p, spec, x, y)
        fd = fd_param_grads(p, spec, x, y)
        for (dw, db), (fw, fb) in zip(grads, fd):
            assert rel_err(dw, fw) < 1e-5
            assert rel_err(db, fb) < 1e-5

    def test_linear_layer_closed_form(self, rng):
        spec = mlp(3, [], 2, activation="identity")
        p = init_params(spec, make_rng(11))
        x = rng.standard_normal((7, 3))
        y = rng.standard_normal((7, 2))
        f = forward(p, spec, x).f
        expected = ((f - y).T @ x) / (np.sqrt(3) * x.shape[0])
        dw = backprop_grads(p, spec, x, y)[0][0]
        np.testing.assert_allclose(dw, expected, atol=1e-12)

    def test_empty_batch_rejected(self):
        spec = mlp(3, [], 2)
        p = init_params(spec, make_rng(0))
        with pytest.raises(ValueError):
            backprop_grads(p, spec, np.zeros((0, 3)), np.zeros((0, 2)))


class TestFeedbackJacobians:
    def test_last_layer_identity(self, rng):
        spec = mlp(3, [4, 4], 2, activation="tanh")
        p = init_params(spec, make_rng(1))
        snap = snapshot(p, spec, rng.standard_normal((3, 3)))
        for gi in snap.g[-1]:
            np.testing.assert_array_equal(gi, np.eye(2))

    def test_identity_net_closed_form(self, rng):
        spec = mlp(3, [4], 2, activation="identity")
        p = init_params(spec, make_rng(2))
        snap = snapshot(p, spec, rng.standard_normal((3, 3)))
        expected = p.weights[1].T / np.sqrt(4)
        for gi in snap.g[0]:
            np.testing.assert_allclose(gi, expected, atol=1e-12)

    def test_matches_numeric_jacobian(self, rng):
        spec = mlp(3, [4, 4], 2, activation="tanh")
        p = init_params(spec, make_rng(4))
        x = rng.standard_normal((2, 3))
        snap = snapshot(p, spec, x)
        step = 1e-6

        def f_from_z(layer, z, xi):
            # resume the forward recursion from a perturbed z_layer
            from alignlab.activations import get_activation
            a = get_activation(spec.layers[layer].activation).fn(z)
            for i in range(layer + 1, spec.depth):
                z = p.weights[i] @ a / np.sqrt(spec.layers[i].fan_in) + p.biases[i]
                if i < spec.depth - 1:
                    a = get_activation(spec.layers[i].activation).fn(z)
            return z

        trace = forward(p, spec, x)
        for li in range(spec.depth - 1):
            for n in range(x.shape[0]):
                z0 = trace.zs[li][n]
                num = np.zeros((z0.size, spec.out_dim))
                for j in range(z0.size):
                    zp, zm = z0.copy(), z0.copy()
                    zp[j] += step
                    zm[j] -= step
                    num[j] = (f_from_z(li, zp, x[n]) - f_from_z(li, zm, x[n])) / (2 * step)
                np.testing.assert_allclose(snap.g[li][n], num, atol=1e-6)

    def test_matches_backprop_deltas_at_init(self, rng):
        # g_l(x) e must equal the backprop delta for error e at time 0
        spec = mlp(3, [5, 4], 2, activation="erf")
        p = init_params(spec, make_rng(6))
        x = rng.standard_normal((4, 3))
        snap = snapshot(p, spec, x)
        trace = forward(p, spec, x)
        e = rng.standard_normal((4, 2))
        deltas = backward_deltas(spec, p, trace, e)
        for li in range(spec.depth):
            via_g = np.einsum("nij,nj->ni", snap.g[li], e)
            np.testing.assert_allclose(deltas[li], via_g, atol=1e-12)

    def test_requires_time_zero(self, rng):
        spec = mlp(3, [4], 2)
        p = init_params(spec, make_rng(0))
        p.t = 3
        with pytest.raises(ValueError):
            snapshot(p, spec, rng.standard_normal((2, 3)))

    def test_empty_dataset_rejected(self):
        spec = mlp(3, [4], 2)
        p = init_params(spec, make_rng(0))
        with pytest.raises(ValueError):
            snapshot(p, spec, np.zeros((0, 3)))

    def test_recompute_is_bit_identical(self, rng):
        spec = mlp(3, [4, 4], 2, activation="tanh")
        p = init_params(spec, make_rng(8))
        x = rng.standard_normal((5, 3))
        s1 = snapshot(p, spec, x)
        s2 = snapshot(p, spec, x)
        for a, b in zip(s1.g, s2.g):
            assert np.array_equal(a, b)


class TestConv:
    def test_matches_nested_loop_reference(self, rng):
        spec = cnn((6, 6), 2, [3, 4], [1, 2], 5)
        p = init_params(spec, make_rng(13))
        x = rng.standard_normal((2, 2, 6, 6))
        trace = forward(p, spec, x)
        z1 = conv2d_reference(x, p.weights[0], p.biases[0], 3, 1, spec.layers[0].fan_in)
        np.testing.assert_allclose(trace.zs[0], z1, atol=1e-10)
        a1 = np.maximum(z1, 0.0)
        z2 = conv2d_reference(a1, p.weights[1], p.biases[1], 3, 2, spec.layers[1].fan_in)
        np.testing.assert_allclose(trace.zs[1], z2, atol=1e-10)
        pooled = np.maximum(z2, 0.0).mean(axis=(2, 3))
        f = pooled @ p.weights[2].T / np.sqrt(4) + p.biases[2]
        np.testing.assert_allclose(trace.f, f, atol=1e-10)

    def test_conv_backprop_matches_finite_differences(self, rng):
        spec = cnn((4, 4), 1, [2, 2], [1, 2], 3, activation="tanh")
        p = init_params(spec, make_rng(14))
        x = rng.standard_normal((3, 1, 4, 4))
        y = rng.standard_normal((3, 3))
        grads = backprop_grads(p, spec, x, y)
        fd = fd_param_grads(p, spec, x, y)
        for (dw, db), (fw, fb) in zip(grads, fd):
            assert rel_err(dw, fw) < 1e-5
            assert rel_err(db, fb) < 1e-5
