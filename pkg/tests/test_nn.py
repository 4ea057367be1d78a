import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sciml import autodiff as ad
from sciml import nn
from sciml.tensor import Rng


def expressivity_net():
    cfg = nn.MlpConfig([1, 2, 1], "relu")
    params = nn.MlpParams([(np.array([[2.0], [1.0]]), np.array([-2.0, 0.0])), (np.array([[1.0, 1.0]]), np.zeros(1))])
    return cfg, params


def test_activation_examples():
    assert float(nn.activation_apply("relu", np.array(-2.0))) == 0.0
    assert float(nn.activation_apply("relu", np.array(3.0))) == 3.0
    assert float(nn.activation_apply("sine", np.array(math.pi / 2))) == 1.0
    assert float(nn.activation_deriv("sine", 0.0)) == 1.0
    t = nn.activation_apply("tanh", Rng(0).normal(1000, std=3.0))
    assert np.all((t > -1) & (t < 1))


def test_relu_derivative_at_zero_is_zero():
    assert float(nn.activation_deriv("relu", 0.0)) == 0.0
    assert float(nn.activation_deriv("leaky_relu", 0.0, alpha=0.2)) == 0.2


@pytest.mark.parametrize("kind", ["linear", "logistic", "tanh", "sine", "relu", "leaky_relu"])
def test_activation_deriv_matches_fd(kind):
    xi = np.array([-1.3, -0.4, 0.35, 1.1])
    h = 1e-6
    fd = (nn.activation_apply(kind, xi + h) - nn.activation_apply(kind, xi - h)) / (2 * h)
    np.testing.assert_allclose(nn.activation_deriv(kind, xi), fd, rtol=1e-7, atol=1e-9)


@pytest.mark.parametrize("x,expected", [(0.0, 0.0), (1.0, 1.0), (2.0, 4.0)])
def test_expressivity_network(x, expected):
    cfg, params = expressivity_net()
    assert float(nn.mlp_forward(cfg, params, np.array([x]))[0]) == expected


def test_expressivity_kinks():
    # second differences vanish away from the kinks at 0 and 1
    cfg, params = expressivity_net()
    x = np.linspace(-2, 3, 501)
    y = nn.mlp_forward(cfg, params, x[:, None])[:, 0]
    d2 = y[2:] - 2 * y[1:-1] + y[:-2]
    mid = x[1:-1]
    nonzero = mid[np.abs(d2) > 1e-12]
    assert np.all(np.isclose(nonzero, 0.0, atol=0.011) | np.isclose(nonzero, 1.0, atol=0.011))
    assert len(nonzero) > 0


def test_width_mismatch():
    cfg, params = expressivity_net()
    with pytest.raises(ValueError):
        nn.mlp_forward(cfg, params, np.ones(2))


def test_config_validation():
    with pytest.raises(ValueError):
        nn.MlpConfig([3])
    with pytest.raises(ValueError):
        nn.MlpConfig([1, 2, 1], "swish")
    with pytest.raises(ValueError):
        nn.MlpConfig([1, 3, 4, 1], residual=True)


@given(st.integers(0, 1000), st.lists(st.integers(1, 6), min_size=2, max_size=5))
@settings(max_examples=30, deadline=None)
def test_linear_network_collapses_to_affine(seed, widths):
    cfg = nn.MlpConfig(widths, "linear")
    params = nn.init_params(cfg, seed)
    A = np.eye(widths[0])
    c = np.zeros(widths[0])
    for W, b in params.layers:
        A, c = W @ A, W @ c + b
    x = Rng(seed + 1).normal((7, widths[0]))
    np.testing.assert_allclose(nn.mlp_forward(cfg, params, x), x @ A.T + c, rtol=1e-12, atol=1e-12)


class TestResnet:
    def test_zero_hidden_is_identity_on_states(self):
        cfg = nn.MlpConfig([3, 5, 5, 5, 5, 2], "relu", residual=True)
        params = nn.init_params(cfg, 0)
        for l in range(1, cfg.depth):
            W, b = params.layers[l]
            params.layers[l] = (np.zeros_like(W), np.zeros_like(b))
        x = Rng(1).normal((4, 3))
        _, _, xs = nn._trace(cfg, params, x, True)
        for l in range(2, cfg.depth + 1):
            assert np.array_equal(xs[l], xs[1])

    def test_zero_layer2_depth2(self):
        cfg = nn.MlpConfig([2, 4, 4, 1], "tanh", residual=True)
        params = nn.init_params(cfg, 2)
        params.layers[1] = (np.zeros((4, 4)), np.zeros(4))
        x = Rng(3).normal((5, 2))
        (W1, b1), _, (W3, b3) = params.layers
        expected = np.tanh(x @ W1.T + b1) @ W3.T + b3
        np.testing.assert_allclose(nn.resnet_forward(cfg, params, x), expected, rtol=1e-15)

    def test_single_hidden_equals_mlp(self):
        cfg = nn.MlpConfig([2, 6, 3], "tanh", residual=True)
        params = nn.init_params(cfg, 4)
        x = Rng(5).normal((3, 2))
        assert np.array_equal(nn.resnet_forward(cfg, params, x), nn.mlp_forward(cfg, params, x))

    def test_zero_resnet_gradient_identity(self):
        cfg = nn.MlpConfig([2] + [4] * 6 + [1], "relu", residual=True)
        params = nn.init_params(cfg, 6)
        for l in range(1, cfg.depth):
            params.layers[l] = (np.zeros((4, 4)), np.zeros(4))
        rep = nn.vanishing_gradient_report(cfg, params, (np.array([0.5, -0.2]), np.array([3.0])))
        assert rep.x_grad_norms[1] == rep.x_grad_norms[cfg.depth]
        assert rep.ratio(1, cfg.depth, which="x") == 1.0

    def test_backward_matches_skip_product(self):
        # dPi/dx^(l-1) = (I + W^T S) dPi/dx^(l) through each skip layer
        cfg = nn.MlpConfig([2, 3, 3, 3, 1], "tanh", residual=True)
        params = nn.init_params(cfg, 8)
        x = Rng(9).normal((1, 2))
        tape = ad.Tape()
        p, _ = params.on_tape(tape)
        out, xis, xs = nn._trace(cfg, p, x, True)
        pi = ad.sum(out)
        L = cfg.depth
        g = dict(zip(range(1, L + 1), ad.grad(pi, xs[1 : L + 1])))
        explicit = params.layers[L][0].T @ np.ones(1)  # dPi/dx^(L)
        np.testing.assert_allclose(g[L][0], explicit, rtol=1e-12)
        for l in range(L, 1, -1):
            W = params.layers[l - 1][0]
            S = np.diag(1 - np.tanh(ad._val(xis[l - 1])[0]) ** 2)
            explicit = (np.eye(3) + W.T @ S) @ explicit
            np.testing.assert_allclose(g[l - 1][0], explicit, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("widths,count", [([1, 2, 1], 7), ([2, 3, 3, 2], 29), ([4, 3], 15)])
def test_param_count(widths, count):
    assert nn.param_count(widths) == count
    cfg = nn.MlpConfig(widths)
    assert nn.init_params(cfg).flat().size == count


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_array_equal(nn.softmax(np.array([0.0, 0.0])), [0.5, 0.5])

    def test_no_overflow(self):
        np.testing.assert_array_equal(nn.softmax(np.array([1000.0, 1000.0])), [0.5, 0.5])

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
    def test_normalised_and_shift_invariant(self, xi, c):
        xi = np.array(xi)
        s = nn.softmax(xi)
        assert abs(s.sum() - 1.0) < 1e-12
        assert np.all((s >= 0) & (s <= 1))
        assert np.argmax(nn.softmax(xi + c)) == np.argmax(s)


class TestLoss:
    @pytest.mark.parametrize("p", [0.0, 0.1, 0.5, 0.9])
    def test_mse_example(self, p):
        assert float(nn.loss("mse", np.array([p, 1 - p]), np.array([0.0, 1.0]))) == pytest.approx(2 * p**2, abs=1e-15)

    def test_cross_entropy_examples(self):
        assert float(nn.loss("cross_entropy", np.array([0.0, 1.0]), np.array([0.0, 1.0]))) == 0.0
        assert float(nn.loss("cross_entropy", np.array([0.3, 0.7]), np.array([0.0, 1.0]))) == pytest.approx(-math.log(0.7))
        assert float(nn.loss("cross_entropy", np.array([0.5, 0.5]), np.array([0.0, 1.0]))) == pytest.approx(0.6931, abs=1e-4)

    def test_cross_entropy_clamp(self):
        val = float(nn.loss("cross_entropy", np.array([1.0, 0.0]), np.array([0.0, 1.0])))
        assert val == pytest.approx(-math.log(1e-12))

    def test_cross_entropy_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            nn.loss("cross_entropy", np.array([0.5, 0.6]), np.array([0.0, 1.0]))
        with pytest.raises(ValueError):
            nn.loss("cross_entropy", np.array([0.5, 0.5]), np.array([0.5, 0.5]))

    def test_mae(self):
        assert float(nn.loss("mae", np.array([[1.0, 2.0], [0.0, 0.0]]), np.zeros((2, 2)))) == 1.5


class TestRegPenalty:
    def test_l2(self):
        assert float(nn.reg_penalty("l2", [np.array([3.0, -4.0])], 1.0)) == 5.0

    def test_l1(self):
        assert float(nn.reg_penalty("l1", [np.array([3.0, -4.0])], 1.0)) == 7.0

    def test_zero_alpha(self):
        assert nn.reg_penalty("l2", [np.array([3.0, -4.0])], 0.0) == 0.0

    def test_negative_alpha(self):
        with pytest.raises(ValueError):
            nn.reg_penalty("l1", [np.ones(2)], -1.0)

    def test_covers_biases(self):
        params = nn.MlpParams([(np.zeros((1, 1)), np.array([2.0]))])
        assert float(nn.reg_penalty("l1", params, 0.5)) == 1.0


class TestVanishingGradient:
    def test_orthogonal_scaled_bound(self):
        Q, _ = np.linalg.qr(Rng(0).normal((6, 6)))
        cfg = nn.MlpConfig([6] * 12, "tanh")
        params = nn.MlpParams([(0.5 * Q, np.zeros(6)) for _ in range(11)])
        rep = nn.vanishing_gradient_report(cfg, params, (np.ones(6), np.zeros(6)))
        assert rep.bound[0] == pytest.approx(0.5**10, rel=1e-7)
        assert all(t == pytest.approx(0.5, rel=1e-8) for t in rep.tau)

    def test_depth_one(self):
        cfg = nn.MlpConfig([2, 3, 1], "tanh")
        params = nn.init_params(cfg, 1)
        rep = nn.vanishing_gradient_report(cfg, params, (np.ones(2), np.zeros(1)))
        assert len(rep.tau) == 2
        assert rep.bound[0] == rep.tau[1]

    def test_power_iteration(self):
        W = Rng(2).normal((5, 4))
        assert nn.power_iteration(W) == pytest.approx(np.linalg.svd(W, compute_uv=False)[0], rel=1e-7)
        assert nn.power_iteration(np.zeros((3, 3))) == 0.0

    def test_bound_dominates_ratio(self):
        # |dPi/dxi^(1)| <= |dPi/dxi^(L+1)| prod tau(W) for 1-Lipschitz activations
        cfg = nn.MlpConfig([3] + [5] * 8 + [1], "tanh")
        params = nn.init_params(cfg, 3)
        rep = nn.vanishing_gradient_report(cfg, params, (np.ones(3), np.zeros(1)))
        assert rep.xi_grad_norms[0] <= rep.xi_grad_norms[-1] * rep.bound[0] * (1 + 1e-12)


def test_checkpoint_round_trip(tmp_path):
    cfg = nn.MlpConfig([2, 3, 1], "leaky_relu", alpha=0.05)
    params = nn.init_params(cfg, 5)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    nn.save_checkpoint(p1, cfg, params)
    cfg2, params2 = nn.load_checkpoint(p1)
    nn.save_checkpoint(p2, cfg2, params2)
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(params.flat(), params2.flat())
    assert cfg2.alpha == 0.05


def test_flat_round_trip():
    cfg = nn.MlpConfig([3, 4, 2])
    params = nn.init_params(cfg, 1)
    again = nn.MlpParams.from_flat(cfg.widths, params.flat())
    assert np.array_equal(again.flat(), params.flat())
    with pytest.raises(ValueError):
        nn.MlpParams.from_flat(cfg.widths, np.zeros(3))


def test_init_bounds():
    cfg = nn.MlpConfig([10, 30, 5])
    params = nn.init_params(cfg, 0)
    for (W, b), (hin, hout) in zip(params.layers, [(10, 30), (30, 5)]):
        assert np.max(np.abs(W)) <= math.sqrt(6 / (hin + hout))
        assert not b.any()
