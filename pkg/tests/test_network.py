import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lcnet.constructions import build_pyramid
from lcnet.network import (
    NetShape,
    ParamSet,
    backward,
    forward,
    init_he,
    l2_penalty,
    load_params,
    params_from_dict,
    params_to_dict,
    save_params,
)

from conftest import central_diff, naive_forward


def random_net(rng, d_in=3, hidden=6, blocks=2, d_out=1, residual=True):
    p = init_he(NetShape(d_in, hidden, blocks, d_out, residual), rng)
    p.biases = [rng.normal(scale=0.3, size=b.shape) for b in p.biases]
    return p


class TestShapes:
    def test_layer_count(self):
        for b in range(4):
            s = NetShape(3, 5, b)
            assert s.num_layers == 2 * b + 2
            assert len(s.layer_dims()) == s.num_layers

    def test_dims_chain(self):
        dims = NetShape(4, 7, 2, 3).layer_dims()
        assert dims[0] == (7, 4) and dims[-1] == (3, 7)
        assert all(d == (7, 7) for d in dims[1:-1])

    @pytest.mark.parametrize("kw", [{"input_dim": 0}, {"hidden_dim": 0}, {"num_residual_blocks": -1}])
    def test_invalid(self, kw):
        args = {"input_dim": 2, "hidden_dim": 3, "num_residual_blocks": 1, **kw}
        with pytest.raises(ValueError):
            NetShape(**args)

    def test_paramset_rejects_broken_chain(self):
        with pytest.raises(ValueError):
            ParamSet([np.ones((3, 2)), np.ones((1, 4))], [np.zeros(3), np.zeros(1)], ())

    def test_paramset_rejects_skip_width_mismatch(self):
        W = [np.ones((3, 2)), np.ones((4, 3)), np.ones((2, 4)), np.ones((1, 2))]
        b = [np.zeros(w.shape[0]) for w in W]
        with pytest.raises(ValueError):
            ParamSet(W, b, (True,))
        ParamSet(W, b, (False,))  # fine without the skip


class TestInit:
    def test_variance_fan_in_two(self):
        p = init_he(NetShape(2, 100000, 0), seed=0)
        assert abs(np.var(p.weights[0]) - 1.0) < 0.05

    def test_deterministic(self):
        a, b = init_he(NetShape(3, 8, 2), 7), init_he(NetShape(3, 8, 2), 7)
        for x, y in zip(a.arrays(), b.arrays()):
            assert np.array_equal(x, y)

    def test_zero_biases(self):
        p = init_he(NetShape(3, 8, 2), 1)
        assert all(np.all(b == 0) for b in p.biases)


class TestForward:
    def test_pyramid_points(self):
        p, _ = build_pyramid("zero")
        y, _ = forward(p, np.array([[0, 0], [0.5, 0], [1, 0], [1.5, 0], [2, 0]], dtype=float))
        assert np.array_equal(y[:, 0], [0, 1, 0, 1, 0])

    def test_zero_weights_give_last_bias(self, rng):
        p = random_net(rng)
        p.weights = [np.zeros_like(w) for w in p.weights]
        y, _ = forward(p, rng.normal(size=(5, 3)))
        assert np.all(y == p.biases[-1])

    def test_matches_naive(self, rng):
        p = random_net(rng)
        Z = rng.normal(size=(10, 3))
        y, _ = forward(p, Z)
        for z, out in zip(Z, y):
            assert np.allclose(out, naive_forward(p.weights, p.biases, p.skips, z), rtol=0, atol=1e-13)

    def test_vector_input(self, rng):
        p = random_net(rng)
        z = rng.normal(size=3)
        y, trace = forward(p, z)
        assert y.shape == (1,)
        assert trace.output.shape == (1,)
        assert np.array_equal(y, forward(p, z[None, :])[0][0])

    def test_width_mismatch(self, rng):
        with pytest.raises(ValueError):
            forward(random_net(rng), np.ones(4))

    def test_replay_bit_identical(self, rng):
        p = random_net(rng)
        Z = rng.normal(size=(7, 3))
        assert np.array_equal(forward(p, Z)[0], forward(p, Z)[0])

    def test_residual_identity(self, rng):
        p = random_net(rng)
        for k in range(1, p.num_layers - 1):
            p.weights[k][:] = 0
            p.biases[k][:] = 0
        Z = rng.normal(size=(6, 3))
        expected = (Z @ p.weights[0].T + p.biases[0]) @ p.weights[-1].T + p.biases[-1]
        assert np.allclose(forward(p, Z)[0], expected, atol=1e-14)

    @given(st.floats(0.1, 10.0))
    def test_first_layer_homogeneous(self, c):
        p = random_net(np.random.default_rng(3))
        Z = np.random.default_rng(4).normal(size=(4, 3))
        scaled = ParamSet([c * w for w in p.weights], [c * b for b in p.biases], p.skips)
        assert np.allclose(forward(scaled, Z)[1].layers[0], c * forward(p, Z)[1].layers[0], rtol=1e-13)


class TestBackward:
    def test_linear_case(self, rng):
        W, b = rng.normal(size=(1, 4)), rng.normal(size=1)
        p = ParamSet([np.eye(4), W], [np.zeros(4), b], ())
        z = rng.normal(size=4)
        g = backward(p, forward(p, z)[1], 2.5)
        assert np.allclose(g.d_weights[1], 2.5 * z[None, :])
        assert np.allclose(g.d_biases[1], [2.5])
        assert np.allclose(g.d_input, 2.5 * W[0])

    def test_pyramid_slope(self):
        p, _ = build_pyramid("zero")
        g = backward(p, forward(p, np.array([0.25, 0.0]))[1], 1.0)
        assert g.d_input[0] == 2.0

    def test_relu_zero_derivative(self):
        # s = 0 exactly at x = 0: the kink contributes nothing
        p = ParamSet([np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1))],
                     [np.zeros(1)] * 4, (False,))
        g = backward(p, forward(p, np.zeros(1))[1], 1.0)
        assert g.d_input[0] == 0.0

    @pytest.mark.parametrize("residual", [True, False])
    def test_finite_differences(self, rng, residual):
        p = random_net(rng, d_in=3, hidden=5, blocks=2, d_out=2, residual=residual)
        Z = rng.normal(size=(4, 3))
        up = rng.normal(size=(4, 2))
        y, trace = forward(p, Z)
        g = backward(p, trace, up)
        obj = lambda: float(np.sum(forward(p, Z)[0] * up))
        for k in range(p.num_layers):
            assert np.allclose(g.d_weights[k], central_diff(obj, p.weights[k]), rtol=1e-6, atol=1e-8)
            assert np.allclose(g.d_biases[k], central_diff(obj, p.biases[k]), rtol=1e-6, atol=1e-8)
        assert np.allclose(g.d_input, central_diff(obj, Z), rtol=1e-6, atol=1e-8)

    def test_mismatched_trace(self, rng):
        a, b = random_net(rng), random_net(rng, hidden=4)
        with pytest.raises(ValueError):
            backward(b, forward(a, np.ones(3))[1], 1.0)


class TestPenalty:
    def test_zero(self):
        p = init_he(NetShape(2, 3, 1), 0)
        p.weights = [np.zeros_like(w) for w in p.weights]
        assert l2_penalty(p) == 0.0

    def test_single_weight(self):
        p = ParamSet([np.array([[3.0]]), np.zeros((1, 1))], [np.zeros(1), np.zeros(1)], ())
        assert l2_penalty(p) == 9.0

    def test_direct_sum(self, rng):
        p = random_net(rng)
        total = 0.0
        for a in p.arrays():
            for v in a.ravel():
                total += v * v
        assert l2_penalty(p) == pytest.approx(total, rel=1e-14)


class TestSerialization:
    def test_round_trip_exact(self, rng, tmp_path):
        p = random_net(rng)
        shape = NetShape(3, 6, 2)
        save_params(tmp_path / "p.json", p, shape)
        q, s = load_params(tmp_path / "p.json")
        assert s == shape and q.skips == p.skips
        for a, b in zip(p.arrays(), q.arrays()):
            assert np.array_equal(a, b)

    def test_row_major_layout(self):
        W = np.array([[1.0, 2.0], [3.0, 4.0]])
        p = ParamSet([W, np.ones((1, 2))], [np.zeros(2), np.zeros(1)], ())
        doc = json.loads(json.dumps(params_to_dict(p)))
        assert doc["layers"][0]["weight"] == [1.0, 2.0, 3.0, 4.0]
        assert np.array_equal(params_from_dict(doc)[0].weights[0], W)

    def test_rejects_foreign_document(self):
        with pytest.raises(ValueError):
            params_from_dict({"format": "other"})
