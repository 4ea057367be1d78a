import numpy as np
import pytest

from sciml import autodiff as ad
from sciml import nn
from sciml.operatornet import deeponet as dn
from sciml.optim import OptimizerState
from sciml.tensor import Rng

SENSORS = np.linspace(0.0, 1.0, 8)


def fixed_model(beta, tau):
    """p = len(beta); branch and trunk return the constants beta and tau."""
    p = len(beta)
    bc = nn.MlpConfig([len(SENSORS), p], "linear")
    tc = nn.MlpConfig([1, p], "linear")
    branch = nn.MlpParams([(np.zeros((p, len(SENSORS))), np.asarray(beta, dtype=float))])
    trunk = nn.MlpParams([(np.zeros((p, 1)), np.asarray(tau, dtype=float))])
    return dn.DeepOnet(SENSORS, bc, tc, branch, trunk, None)


class TestForward:
    def test_dot_product(self):
        m = fixed_model([2.0], [3.0])
        assert float(dn.deeponet_forward(m, np.ones(8), np.array([0.3]))) == 6.0

    def test_zero_branch(self):
        m = dn.init_deeponet(SENSORS, p=4, seed=1)
        m = dn.DeepOnet(m.sensors, m.branch_cfg, m.trunk_cfg,
                        nn.MlpParams([(np.zeros_like(W), np.zeros_like(b)) for W, b in m.branch.layers]), m.trunk)
        out = dn.deeponet_forward(m, Rng(0).normal((5, 8)), Rng(1).uniform((5, 1)))
        assert np.array_equal(out, np.zeros(5))

    def test_linear_in_branch_output(self):
        tau = np.array([0.5, -1.0, 2.0])
        b1, b2 = np.array([1.0, 2.0, 3.0]), np.array([-2.0, 0.5, 1.0])
        x = np.array([0.7])
        f = lambda b: float(dn.deeponet_forward(fixed_model(b, tau), np.zeros(8), x))
        assert f(2 * b1 - 3 * b2) == pytest.approx(2 * f(b1) - 3 * f(b2), rel=1e-15)

    def test_wrong_sensor_count(self):
        m = dn.init_deeponet(SENSORS, p=2)
        with pytest.raises(ValueError, match="8 sensor values"):
            dn.deeponet_forward(m, np.ones(7), np.array([0.1]))

    def test_sensor_permutation_invariance(self):
        m = dn.init_deeponet(SENSORS, p=4, branch_hidden=(6,), seed=2)
        perm = Rng(3).permutation(8)
        W, b = m.branch.layers[0]
        branch = nn.MlpParams([(W[:, perm], b)] + list(m.branch.layers[1:]))
        mp = dn.DeepOnet(SENSORS[perm], m.branch_cfg, m.trunk_cfg, branch, m.trunk, m.trunk_domain)
        a = Rng(4).normal((3, 8))
        x = Rng(5).uniform((3, 1))
        np.testing.assert_allclose(dn.deeponet_forward(mp, a[:, perm], x), dn.deeponet_forward(m, a, x), rtol=1e-13)

    def test_sensors_fixed(self):
        m = dn.init_deeponet(SENSORS, p=2)
        with pytest.raises(ValueError):
            m.sensors[0] = 5.0

    def test_distinct_sensors(self):
        with pytest.raises(ValueError):
            dn.init_deeponet([0.0, 0.5, 0.5], p=2)

    def test_grid_prediction(self):
        m = dn.init_deeponet(SENSORS, p=3, seed=6)
        A, X = Rng(7).normal((4, 8)), np.linspace(0, 1, 5)
        grid = dn.deeponet_predict_grid(m, A, X)
        ref = dn.deeponet_forward(m, np.repeat(A, 5, axis=0), np.tile(X, 4)[:, None]).reshape(4, 5)
        np.testing.assert_allclose(grid, ref, rtol=1e-13)


class TestDataset:
    def test_constant_input(self):
        one = lambda t: np.ones((1, len(np.ravel(t))))
        ds = dn.build_deeponet_dataset(one, dn.antiderivative_oracle, SENSORS, 1, 10, seed=0)
        np.testing.assert_allclose(ds.U[0], ds.X[0, :, 0], atol=1e-14)

    def test_cosine(self):
        cos = lambda t: np.cos(np.ravel(t))[None]
        ds = dn.build_deeponet_dataset(cos, dn.antiderivative_oracle, SENSORS, 1, 20, seed=1)
        assert np.max(np.abs(ds.U[0] - np.sin(ds.X[0, :, 0]))) < 1e-6

    def test_single_triple(self):
        smp = dn.random_fourier_functions(3, seed=0)
        ds = dn.build_deeponet_dataset(smp, dn.antiderivative_oracle, SENSORS, 1, 1)
        a, x, u = ds.triples()
        assert a.shape == (1, 8) and x.shape == (1, 1) and u.shape == (1,)

    def test_shared_grid(self):
        smp = dn.random_fourier_functions(3, seed=0)
        ds = dn.build_deeponet_dataset(smp, dn.antiderivative_oracle, SENSORS, 3, 5, random_points=False)
        assert np.array_equal(ds.X[0], ds.X[2])

    def test_fourier_functions_periodic(self):
        v = dn.random_fourier_functions(4, K=5, seed=3)(np.array([0.0, 1.0]))
        np.testing.assert_allclose(v[:, 0], v[:, 1], atol=1e-12)


class TestTrain:
    def test_memorise_single_function(self):
        smp = dn.random_fourier_functions(1, 3, seed=0, decay=2)
        ds = dn.build_deeponet_dataset(smp, dn.antiderivative_oracle, np.linspace(0, 1, 16), 1, 16, seed=0)
        m = dn.init_deeponet(np.linspace(0, 1, 16), p=8, branch_hidden=(10,), trunk_hidden=(20, 20), seed=0)
        res = dn.deeponet_train(m, ds, 2000, "lbfgs")
        assert float(dn.deeponet_loss(res.model, *ds.triples())) < 1e-6

    def test_zero_target(self):
        smp = dn.random_fourier_functions(5, 3, seed=1)
        ds = dn.build_deeponet_dataset(smp, dn.antiderivative_oracle, SENSORS, 5, 6, seed=1)
        ds.U[:] = 0.0
        m = dn.init_deeponet(SENSORS, p=4, branch_hidden=(), trunk_hidden=(8,), seed=0)
        before = np.linalg.norm(dn.deeponet_predict_grid(m, ds.A, np.linspace(0, 1, 11)))
        res = dn.deeponet_train(m, ds, 300, "lbfgs")
        after = np.linalg.norm(dn.deeponet_predict_grid(res.model, ds.A, np.linspace(0, 1, 11)))
        assert after < 1e-3 * before

    def test_adam_deterministic(self):
        smp = dn.random_fourier_functions(4, 3, seed=2)
        ds = dn.build_deeponet_dataset(smp, dn.antiderivative_oracle, SENSORS, 4, 4, seed=2)
        m = dn.init_deeponet(SENSORS, p=3, trunk_hidden=(5,), branch_hidden=(), seed=3)
        r1 = dn.deeponet_train(m, ds, 20, OptimizerState("adam", 1e-2), batch_size=6, seed=9)
        r2 = dn.deeponet_train(m, ds, 20, OptimizerState("adam", 1e-2), batch_size=6, seed=9)
        assert r1.history == r2.history
        assert r1.history[-1][1] < r1.history[0][1]

    def test_empty(self):
        ds = dn.DeepOnetDataset(np.zeros((0, 8)), np.zeros((0, 3, 1)), np.zeros((0, 3)))
        with pytest.raises(ValueError):
            dn.deeponet_train(dn.init_deeponet(SENSORS, p=2), ds, 5)

    def test_relative_l2(self):
        assert dn.relative_l2([[2.0, 0.0]], [[1.0, 0.0]]) == 1.0
        assert dn.relative_l2([[1.0, 1.0], [0.0, 3.0]], [[1.0, 1.0], [0.0, 1.5]]) == 0.5


class TestPhysicsInformed:
    def data(self):
        smp = dn.random_fourier_functions(3, 3, seed=4)
        ds = dn.build_deeponet_dataset(smp, dn.antiderivative_oracle, SENSORS, 3, 4, seed=4)
        return ds, smp

    def test_lam_zero(self):
        ds, _ = self.data()
        m = dn.init_deeponet(SENSORS, p=3, trunk_hidden=(5,), seed=0)
        total, pd, pp = dn.pideeponet_loss(m, ds.triples(), None, None, lam=0.0)
        assert float(ad._val(total)) == float(ad._val(dn.deeponet_loss(m, *ds.triples())))

    def test_exact_linear_operator(self):
        # G(a)(x) = a(0) x solves du/dx = a(0); the network returns beta . tau = a_0 * x
        bc = nn.MlpConfig([8, 1], "linear")
        tc = nn.MlpConfig([1, 1], "linear")
        W = np.zeros((1, 8))
        W[0, 0] = 1.0
        m = dn.DeepOnet(SENSORS, bc, tc, nn.MlpParams([(W, np.zeros(1))]), nn.MlpParams([(np.ones((1, 1)), np.zeros(1))]), None)
        ds, smp = self.data()
        # residual functions and points disjoint from the data set
        ar = dn.random_fourier_functions(5, 3, seed=99)(SENSORS)
        xr = Rng(8).uniform((5, 1))
        residual = lambda a, x, u, d_dx: ad.sub(d_dx(u), a[:, 0])
        total, pd, pp = dn.pideeponet_loss(m, ds.triples(), (ar, xr), residual, lam=1.0)
        assert float(ad._val(pp)) < 1e-28
