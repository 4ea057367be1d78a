import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sciml import autodiff as ad
from sciml import nn
from sciml.tensor import Rng


def _relu_example(x):
    # W1 = [2, 1]^T, b1 = [-2, 0]^T, W2 = [1, 1], b2 = 0
    cfg = nn.MlpConfig([1, 2, 1], "relu")
    params = nn.MlpParams([(np.array([[2.0], [1.0]]), np.array([-2.0, 0.0])), (np.array([[1.0, 1.0]]), np.zeros(1))])
    return nn.mlp_forward(cfg, params, x)


def _fd(f, x, h=1e-6):
    x = np.asarray(x, dtype=np.float64)
    g = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        g[i] = (f(x + e.reshape(x.shape)) - f(x - e.reshape(x.shape))) / (2 * h)
    return g.reshape(x.shape)


class TestRecord:
    def test_square(self):
        tape = ad.record(lambda x: x * x, 3.0)
        assert float(tape.output.value) == 9.0

    def test_relu_network(self):
        tape = ad.record(lambda x: ad.sum(_relu_example(x)), np.array([2.0]))
        assert float(tape.output.value) == 4.0

    def test_constant(self):
        tape = ad.record(lambda x: 7.5, 1.0)
        assert float(tape.output.value) == 7.5

    def test_topological(self):
        cfg = nn.MlpConfig([2, 3, 1], "tanh")
        params = nn.init_params(cfg, 0)
        tape = ad.record(lambda x: ad.sum(nn.mlp_forward(cfg, params, x)), np.ones((4, 2)))
        for k, node in enumerate(tape.nodes):
            assert all(p < k for p in node.parents)

    def test_unregistered_op(self):
        with pytest.raises(ad.UnregisteredPrimitiveError):
            ad.record(lambda x: np.sinh(x), np.array([1.0]))


class TestBackward:
    def test_square(self):
        tape = ad.record(lambda x: x * x, 3.0)
        adj = ad.backward(tape)
        assert float(adj[tape.roots[0]]) == 6.0

    def test_linear_layer(self):
        # Pi = ||y - W x||^2 with W = [[1]], x = [1], y = [0]: dPi/dW = 2 (Wx - y) x = 2
        tape = ad.record(lambda W: ad.sum(ad.square(ad.sub(np.zeros((1, 1)), ad.matmul(W, np.ones((1, 1)))))), np.eye(1))
        assert ad.backward(tape)[tape.roots[0]].tolist() == [[2.0]]

    def test_seed_shape_mismatch(self):
        tape = ad.record(lambda x: x * 2.0, np.ones(3))
        with pytest.raises(ValueError):
            ad.backward(tape, np.ones(2))

    def test_random_tanh_mlp_matches_fd(self):
        cfg = nn.MlpConfig([3, 5, 4, 2], "tanh")
        params = nn.init_params(cfg, Rng(3))
        x = Rng(4).normal((6, 3))
        arrays = params.arrays()
        tape = ad.record(lambda *a: ad.sum(ad.square(nn.mlp_forward(cfg, nn.MlpParams.from_arrays(list(a)), x))), *arrays)
        rep = ad.grad_check(tape)
        assert rep.max_rel_error < 1e-5
        assert len(rep) == len(arrays)

    def test_outer_product_structure(self):
        # dPi/dW^(l) = dPi/dxi^(l) (x) x^(l-1) and dPi/db^(l) = dPi/dxi^(l)
        cfg = nn.MlpConfig([3, 4, 2], "tanh")
        params = nn.init_params(cfg, 1)
        x = Rng(2).normal((1, 3))
        tape = ad.Tape()
        p, leaves = params.on_tape(tape)
        out, xis, xs = nn._trace(cfg, p, x, False)
        pi = ad.sum(ad.square(out))
        grads = ad.grad(pi, leaves + xis)
        for l in range(2):
            dxi = grads[4 + l][0]
            np.testing.assert_allclose(grads[2 * l], np.outer(dxi, ad._val(xs[l])[0]), rtol=1e-14, atol=1e-15)
            np.testing.assert_array_equal(grads[2 * l + 1], dxi)

    def test_chain_rule_factorisation(self):
        # explicit dPi/dxi^(l) = S^(l) W^(l+1)^T ... assembled from diagonal derivative matrices
        cfg = nn.MlpConfig([2, 5, 5, 5, 1], "tanh")
        params = nn.init_params(cfg, 7)
        x = Rng(8).normal((1, 2))
        tape = ad.Tape()
        p, _ = params.on_tape(tape)
        out, xis, _ = nn._trace(cfg, p, x, False)
        pi = ad.mul(ad.sum(ad.square(ad.sub(out, 0.3))), 0.5)
        g_ad = ad.grad(pi, xis)
        L = cfg.depth
        g = (ad._val(out) - 0.3).reshape(-1)  # dPi/dxi^(L+1)
        explicit = [None] * (L + 1)
        explicit[L] = g
        for l in range(L - 1, -1, -1):
            W_next = params.layers[l + 1][0]
            S = np.diag(nn.activation_deriv("tanh", ad._val(xis[l])[0]))
            explicit[l] = S @ W_next.T @ explicit[l + 1]
        for a, b in zip(g_ad, explicit):
            np.testing.assert_allclose(a[0], b, rtol=1e-12, atol=1e-14)

    def test_accumulation_is_reproducible(self):
        cfg = nn.MlpConfig([2, 6, 1], "sine")
        params = nn.init_params(cfg, 0)
        x = Rng(1).normal((5, 2))
        runs = []
        for _ in range(2):
            tape = ad.Tape()
            p, leaves = params.on_tape(tape)
            runs.append(b"".join(g.tobytes() for g in ad.grad(ad.sum(nn.mlp_forward(cfg, p, x)), leaves)))
        assert runs[0] == runs[1]


class TestInputJacobian:
    def test_linear(self):
        tape = ad.record(lambda x: ad.mul(x, 3.0), np.array([0.2]))
        assert ad.input_jacobian(tape).tolist() == [[3.0]]

    def test_tanh_at_zero(self):
        tape = ad.record(lambda x: ad.tanh(x), np.array([0.0]))
        assert ad.input_jacobian(tape).tolist() == [[1.0]]

    def test_sine_mlp_matches_fd(self):
        cfg = nn.MlpConfig([3, 6, 6, 2], "sine")
        params = nn.init_params(cfg, 5)
        x0 = Rng(6).normal(3)
        J = ad.input_jacobian(ad.record(lambda x: nn.mlp_forward(cfg, params, x), x0))
        for i in range(2):
            fd = _fd(lambda x: nn.mlp_forward(cfg, params, x)[i], x0)
            np.testing.assert_allclose(J[i], fd, rtol=1e-5, atol=1e-8)

    def test_product_formula(self):
        # dx^(L+1)/dx^(0) = W^(L+1) S^(L) W^(L) ... S^(1) W^(1)
        cfg = nn.MlpConfig([2, 4, 4, 3], "tanh")
        params = nn.init_params(cfg, 9)
        x0 = Rng(10).normal(2)
        J = ad.input_jacobian(ad.record(lambda x: nn.mlp_forward(cfg, params, x), x0))
        M = np.eye(2)
        h = x0
        for l, (W, b) in enumerate(params.layers):
            xi = W @ h + b
            if l < cfg.depth:
                M = np.diag(1 - np.tanh(xi) ** 2) @ W @ M
                h = np.tanh(xi)
            else:
                M = W @ M
        np.testing.assert_allclose(J, M, rtol=1e-12, atol=1e-14)

    def test_batched(self):
        cfg = nn.MlpConfig([2, 4, 1], "tanh")
        params = nn.init_params(cfg, 2)
        X = Rng(3).normal((5, 2))
        J = ad.input_jacobian(ad.record(lambda x: nn.mlp_forward(cfg, params, x), X), batched=True)
        for i in range(5):
            Ji = ad.input_jacobian(ad.record(lambda x: nn.mlp_forward(cfg, params, x), X[i]))
            np.testing.assert_allclose(J[i], Ji, rtol=1e-13)


class TestExtend:
    def test_square_twice(self):
        tape = ad.record(lambda x: x * x, 1.7)
        d2 = ad.extend(ad.extend(tape))
        assert float(d2.output.value) == 2.0

    def test_sine_twice_at_zero(self):
        d2 = ad.extend(ad.extend(ad.record(lambda x: ad.sin(x), 0.0)))
        assert float(d2.output.value) == 0.0

    def test_tanh_mlp_second_derivative(self):
        cfg = nn.MlpConfig([1, 8, 8, 1], "tanh")
        params = nn.init_params(cfg, 11)
        f = lambda x: float(nn.mlp_forward(cfg, params, np.array([x]))[0])
        for x0 in (-0.7, 0.1, 0.9):
            d2 = ad.extend(ad.extend(ad.record(lambda x: ad.sum(nn.mlp_forward(cfg, params, x)), np.array([x0]))))
            h = 1e-4
            fd = (f(x0 + h) - 2 * f(x0) + f(x0 - h)) / h**2
            assert float(d2.output.value[0]) == pytest.approx(fd, rel=1e-4, abs=1e-6)

    def test_relu_rejected(self):
        tape = ad.record(lambda x: ad.sum(_relu_example(x)), np.array([0.5]))
        with pytest.raises(ad.SmoothnessError, match="insufficient smoothness"):
            ad.extend(tape)

    @given(st.floats(-2.0, 2.0), st.sampled_from(["sin", "cos", "tanh", "exp", "cube"]))
    @settings(max_examples=40, deadline=None)
    def test_closed_form_second_derivatives(self, x0, kind):
        fns = {
            "sin": (ad.sin, lambda x: -np.sin(x)),
            "cos": (ad.cos, lambda x: -np.cos(x)),
            "tanh": (ad.tanh, lambda x: -2 * np.tanh(x) * (1 - np.tanh(x) ** 2)),
            "exp": (ad.exp, np.exp),
            "cube": (lambda x: ad.power(x, 3.0), lambda x: 6 * x),
        }
        f, d2 = fns[kind]
        out = float(ad.extend(ad.extend(ad.record(f, x0))).output.value)
        assert out == pytest.approx(d2(x0), rel=1e-10, abs=1e-10)

    def test_grad_create_graph_docstring_example(self):
        tape = ad.Tape()
        x = tape.leaf(3.0)
        (du,) = ad.grad(x * x, [x], create_graph=True)
        (d2u,) = ad.grad(du, [x])
        assert (float(du.value), float(d2u)) == (6.0, 2.0)


class TestGradCheck:
    def test_quadratic(self):
        A = np.array([[2.0, 0.5], [0.5, 1.0]])
        tape = ad.record(lambda t: ad.sum(ad.mul(t, ad.matmul(A, t))), np.array([[0.3], [-1.2]]))
        assert ad.grad_check(tape).max_rel_error < 1e-7

    def test_deep_tanh(self):
        cfg = nn.MlpConfig([2] + [6] * 6 + [1], "tanh")
        params = nn.init_params(cfg, 4)
        tape = ad.record(lambda *a: ad.sum(nn.mlp_forward(cfg, nn.MlpParams.from_arrays(list(a)), np.ones((3, 2)))),
                         *params.arrays())
        assert ad.grad_check(tape).max_rel_error < 1e-5

    def test_empty(self):
        tape = ad.Tape()
        c = tape.const(np.ones(2))
        tape.tip = ad.sum(c).idx
        rep = ad.grad_check(tape)
        assert len(rep) == 0 and rep.max_rel_error == 0.0

    def test_step_positive(self):
        with pytest.raises(ValueError):
            ad.grad_check(ad.record(lambda x: x, 1.0), step=0.0)


@given(st.integers(0, 10_000), st.integers(1, 4), st.sampled_from(["tanh", "sine", "logistic"]))
@settings(max_examples=25, deadline=None)
def test_backward_matches_fd_property(seed, depth, act):
    r = Rng(seed)
    widths = [2] + [1 + r.integer(5) for _ in range(depth)] + [1]
    cfg = nn.MlpConfig(widths, act)
    params = nn.init_params(cfg, r.spawn(1))
    x = r.spawn(2).normal((3, 2))
    tape = ad.record(lambda *a: ad.sum(nn.mlp_forward(cfg, nn.MlpParams.from_arrays(list(a)), x)), *params.arrays())
    assert ad.grad_check(tape).max_rel_error < 1e-5


def test_primitive_registry():
    names = ad.primitive_names()
    for op in ("add", "matmul", "tanh", "relu", "sum", "conv2d", "spectral_conv"):
        assert op in names
