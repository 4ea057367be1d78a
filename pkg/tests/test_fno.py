import json

import numpy as np
import pytest

from sciml.operatornet import deeponet as dn
from sciml.operatornet import fno
from sciml.optim import OptimizerState
from sciml.tensor import Rng


def band_limited(N, seed=0):
    x = np.arange(N) / N
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    r = Rng(seed)
    c = r.normal(4)
    return c[0] + c[1] * np.cos(2 * np.pi * X1) + c[2] * np.sin(2 * np.pi * (X1 + 2 * X2)) + c[3] * np.cos(6 * np.pi * X2)


class TestGrid:
    def test_power_of_two(self):
        with pytest.raises(ValueError):
            fno.GridFunction2D(np.zeros((12, 8)))

    def test_nodes_exclude_endpoint(self):
        g = fno.GridFunction2D(np.zeros((4, 2)), (2.0, 1.0))
        x1, x2 = g.nodes()
        assert x1.tolist() == [0.0, 0.5, 1.0, 1.5] and x2.tolist() == [0.0, 0.5]

    def test_default_kmax(self):
        assert fno.default_kmax(64) == 12 and fno.default_kmax(16) == 4


class TestForward:
    def test_shape(self):
        m = fno.init_fno(4, 2, (3, 3), seed=0)
        a = Rng(1).normal((16, 16))
        assert fno.fno_forward(m, a).shape == (16, 16)
        assert fno.fno_forward(m, Rng(1).normal((3, 16, 16))).shape == (3, 16, 16)

    def test_zero_spectral_is_pointwise_mlp(self):
        m = fno.init_fno(5, 2, (3, 3), activation="tanh", seed=2)
        layers = [fno.FnoLayer(l.W, l.b, np.zeros_like(l.kappa)) for l in m.layers]
        m = fno.Fno(m.lift, layers, m.proj, m.activation)
        # lift and projection are affine; tanh follows each middle layer
        a = Rng(3).normal((8, 8))
        v = a[..., None] @ m.lift[0].T + m.lift[1]
        for l in layers:
            v = np.tanh(v @ l.W.T + l.b)
        ref = (v @ m.proj[0].T + m.proj[1])[..., 0]
        np.testing.assert_allclose(fno.fno_forward(m, a), ref, rtol=1e-13, atol=1e-14)
        # and each node is independent: permuting nodes permutes outputs
        perm = Rng(4).permutation(64)
        out = fno.fno_forward(m, a.reshape(-1)[perm].reshape(8, 8))
        np.testing.assert_allclose(out.reshape(-1), fno.fno_forward(m, a).reshape(-1)[perm], rtol=1e-13)

    def test_identity_construction(self):
        r = Rng(5)
        lift = (r.normal((3, 1)), r.normal(3))
        proj = (r.normal((1, 3)), r.normal(1))
        m = fno.identity_fno(lift, proj, kmax=(4, 4))
        a = band_limited(16, 1)
        lifted = a[..., None] @ lift[0].T + lift[1]
        ref = (lifted @ proj[0].T + proj[1])[..., 0]
        np.testing.assert_allclose(fno.fno_forward(m, a), ref, atol=1e-12)

    def test_discretisation_consistency(self):
        r = Rng(6)
        m = fno.identity_fno((r.normal((4, 1)), r.normal(4)), (r.normal((1, 4)), r.normal(1)), kmax=(4, 4))
        u32 = fno.fno_forward(m, band_limited(32, 2))
        u64 = fno.fno_forward(m, band_limited(64, 2))
        assert np.max(np.abs(u64[::2, ::2] - u32)) < 1e-6

    def test_grid_too_small(self):
        m = fno.init_fno(2, 1, (4, 4))
        with pytest.raises(ValueError, match="layer 1"):
            fno.fno_forward(m, np.zeros((8, 8)))

    def test_channel_mismatch(self):
        m = fno.init_fno(2, 1, (1, 1), d_in=2)
        with pytest.raises(ValueError):
            fno.fno_forward(m, np.zeros((1, 4, 4, 3)))

    def test_asymmetric_kernel_rejected(self):
        K = np.zeros((1, 1, 3, 1), dtype=complex)
        K[0, 0, 0, 0] = 1.0
        with pytest.raises(ValueError):
            fno.FnoLayer(np.zeros((1, 1)), np.zeros(1), K)


class TestHelmholtz:
    def test_single_mode(self):
        N = 32
        x = np.arange(N) / N
        a = np.cos(2 * np.pi * 3 * x)
        u = fno.periodic_helmholtz_oracle(a)[0]
        np.testing.assert_allclose(u, a / (1 + (6 * np.pi) ** 2), atol=1e-15)

    def test_constant(self):
        np.testing.assert_allclose(fno.periodic_helmholtz_oracle(np.full(8, 2.0)), 2.0, atol=1e-15)


class TestTrain:
    def test_identity_operator(self):
        A = fno.random_periodic_fields(20, 32, 4, seed=1)[:, :, None]
        m = fno.init_fno(8, 1, (6, 0), seed=0)
        res = fno.fno_train(m, A, A, 1000, OptimizerState("adam", 1e-2))
        assert dn.relative_l2(fno.fno_forward(res.model, A), A) < 0.01
        B = fno.random_periodic_fields(10, 32, 4, seed=2)[:, :, None]
        assert dn.relative_l2(fno.fno_forward(res.model, B), B) < 0.02

    def test_empty(self):
        with pytest.raises(ValueError):
            fno.fno_train(fno.init_fno(2, 1, (1, 0)), np.zeros((0, 8, 1)), np.zeros((0, 8, 1)), 5)

    def test_mismatched_pairs(self):
        with pytest.raises(ValueError):
            fno.fno_train(fno.init_fno(2, 1, (1, 0)), np.zeros((2, 8, 1)), np.zeros((2, 4, 1)), 5)

    def test_deterministic_and_symmetric(self):
        A = fno.random_periodic_fields(6, 16, 3, seed=3)[:, :, None]
        U = fno.periodic_helmholtz_oracle(A[:, :, 0])[:, :, None]
        m = fno.init_fno(4, 1, (3, 0), seed=1)
        r1 = fno.fno_train(m, A, U, 15, OptimizerState("adam", 1e-2), batch_size=3, seed=2)
        r2 = fno.fno_train(m, A, U, 15, OptimizerState("adam", 1e-2), batch_size=3, seed=2)
        assert r1.history == r2.history
        from sciml.operatornet.fourier import is_conjugate_symmetric

        assert all(is_conjugate_symmetric(l.kappa) for l in r1.model.layers)


def test_checkpoint_round_trip():
    m = fno.init_fno(3, 2, (2, 1), seed=4)
    doc = json.loads(json.dumps(fno.fno_to_jsonable(m)))
    m2 = fno.fno_from_jsonable(doc)
    for p, q in zip(m.arrays(), m2.arrays()):
        assert np.array_equal(p, q)
