"""DeepONet: branch and trunk MLPs combined by a dot product.

    G(a)(x) ~ sum_k beta_k(a(y_1), ..., a(y_M)) tau_k(x)

The branch sees the input function at M fixed sensors, the trunk sees the
query point. There is no output bias.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .. import autodiff as ad
from .. import nn
from ..optim import OptimizerState, step
from ..tensor import Rng

__all__ = [
    "DeepOnet",
    "init_deeponet",
    "deeponet_forward",
    "deeponet_predict_grid",
    "random_fourier_functions",
    "antiderivative_oracle",
    "build_deeponet_dataset",
    "DeepOnetDataset",
    "deeponet_train",
    "deeponet_loss",
    "pideeponet_loss",
    "relative_l2",
]


@dataclass
class DeepOnet:
    sensors: np.ndarray  # (M,) or (M, d_y)
    branch_cfg: nn.MlpConfig
    trunk_cfg: nn.MlpConfig
    branch: nn.MlpParams
    trunk: nn.MlpParams
    trunk_domain: tuple | None = None  # (lo, hi) mapped affinely onto [-1, 1] before the trunk

    def __post_init__(self):
        self.sensors = np.array(self.sensors, dtype=np.float64)
        self.sensors.setflags(write=False)  # sensors stay fixed for the model's lifetime
        if self.branch_cfg.widths[0] != len(self.sensors):
            raise ValueError("branch input width must equal the sensor count")
        if self.branch_cfg.widths[-1] != self.trunk_cfg.widths[-1]:
            raise ValueError("branch and trunk must share the latent dimension p")
        if len(np.unique(self.sensors, axis=0)) != len(self.sensors):
            raise ValueError("sensor points must be distinct")

    @property
    def p(self) -> int:
        return self.branch_cfg.widths[-1]

    def arrays(self) -> list:
        return self.branch.arrays() + self.trunk.arrays()

    def with_arrays(self, arrays) -> "DeepOnet":
        nb = len(self.branch.arrays())
        return DeepOnet(
            self.sensors,
            self.branch_cfg,
            self.trunk_cfg,
            nn.MlpParams.from_arrays(arrays[:nb]),
            nn.MlpParams.from_arrays(arrays[nb:]),
            self.trunk_domain,
        )


def init_deeponet(sensors, p: int = 16, branch_hidden=(40, 40), trunk_hidden=(40, 40), d: int = 1,
                  activation: str = "tanh", trunk_domain=(0.0, 1.0), seed: int = 0) -> DeepOnet:
    """Glorot-initialised branch R^M -> R^p and trunk R^d -> R^p.

    ``branch_hidden=()`` gives an affine branch, which is enough for linear operators.
    """
    rng = Rng(seed)
    M = len(sensors)
    bc = nn.MlpConfig([M, *branch_hidden, p], activation)
    tc = nn.MlpConfig([d, *trunk_hidden, p], activation)
    return DeepOnet(sensors, bc, tc, nn.init_params(bc, rng.spawn(1)), nn.init_params(tc, rng.spawn(2)), trunk_domain)


def _branch_trunk(model: DeepOnet, a, x, branch=None, trunk=None):
    branch = model.branch if branch is None else branch
    trunk = model.trunk if trunk is None else trunk
    beta = nn.mlp_forward(model.branch_cfg, branch, a)
    if model.trunk_domain is not None:
        lo, hi = model.trunk_domain
        x = ad.sub(ad.mul(x, 2.0 / (hi - lo)), (hi + lo) / (hi - lo))
    tau = nn.mlp_forward(model.trunk_cfg, trunk, x)
    return beta, tau


def deeponet_forward(model: DeepOnet, a, x, branch=None, trunk=None):
    """Batched triples: ``a`` (B, M) and ``x`` (B, d) -> (B,) outputs.

    A single sample ``a`` (M,) with ``x`` (d,) returns a scalar.
    """
    a_shape = ad._shape(a)
    if a_shape[-1] != len(model.sensors):
        raise ValueError(f"expected {len(model.sensors)} sensor values, got {a_shape[-1]}")
    single = len(a_shape) == 1
    if single:
        a = ad.reshape(a, (1, a_shape[0]))
        xs = ad._shape(x)
        x = ad.reshape(x, (1, xs[0] if xs else 1))
    beta, tau = _branch_trunk(model, a, x, branch, trunk)
    out = ad.sum(ad.mul(beta, tau), axis=1)
    if single:
        return out[0] if not isinstance(out, ad.Var) else ad.reshape(out, ())
    return out


def deeponet_predict_grid(model: DeepOnet, A, X) -> np.ndarray:
    """Outputs for every function in ``A`` (N1, M) at every point in ``X`` (N2, d): (N1, N2)."""
    beta, tau = _branch_trunk(model, np.asarray(A, dtype=np.float64), np.asarray(X, dtype=np.float64).reshape(len(X), -1))
    return beta @ tau.T


def random_fourier_functions(n: int, K: int = 5, seed: int = 0, decay: float = 1.0):
    """n random periodic functions on [0, 1] with modes 0..K.

    a(t) = c_0 + sum_k (c_k cos 2 pi k t + s_k sin 2 pi k t) / k^decay, coefficients
    standard normal. Returns a callable evaluating all functions at t,
    giving an array of shape (n, len(t)).
    """
    rng = Rng(seed)
    c = rng.normal((n, K + 1))
    s = rng.normal((n, K + 1))
    k = np.arange(K + 1)
    w = np.ones(K + 1)
    w[1:] = 1.0 / k[1:] ** decay
    s[:, 0] = 0.0

    def evaluate(t):
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        ph = 2 * np.pi * np.outer(k, t)
        return (c * w) @ np.cos(ph) + (s * w) @ np.sin(ph)

    return evaluate


def antiderivative_oracle(values, t) -> np.ndarray:
    """Cumulative trapezoid integral int_0^t a, rows of ``values`` sampled at ``t``."""
    values = np.atleast_2d(values)
    dt = np.diff(t)
    inc = 0.5 * (values[:, 1:] + values[:, :-1]) * dt
    return np.concatenate([np.zeros((values.shape[0], 1)), np.cumsum(inc, axis=1)], axis=1)


@dataclass
class DeepOnetDataset:
    A: np.ndarray  # (N1, M) sensor values
    X: np.ndarray  # (N1, N2, d) output points
    U: np.ndarray  # (N1, N2) targets

    def triples(self):
        N1, N2 = self.U.shape
        a = np.repeat(self.A, N2, axis=0)
        x = self.X.reshape(N1 * N2, -1)
        return a, x, self.U.reshape(-1)


def build_deeponet_dataset(
    sampler: Callable,
    oracle: Callable,
    sensors,
    n_functions: int,
    n_points: int,
    seed: int = 0,
    random_points: bool = True,
) -> DeepOnetDataset:
    """Triples (a(sensors), x, G(a)(x)) for ``n_functions`` inputs on [0, 1].

    ``sampler(t)`` returns the input functions evaluated at ``t`` (rows =
    functions); ``oracle(values, t)`` returns G(a) on the same fine grid
    (1024 intervals), which is then interpolated linearly to the output
    points. Output points are random per function or a shared uniform grid.
    """
    sensors = np.asarray(sensors, dtype=np.float64)
    fine = np.linspace(0.0, 1.0, 1025)
    vals = sampler(fine)[:n_functions]
    G = oracle(vals, fine)
    A = sampler(sensors)[:n_functions]
    rng = Rng(seed)
    if random_points:
        X = rng.uniform((n_functions, n_points))
    else:
        X = np.tile(np.linspace(0.0, 1.0, n_points), (n_functions, 1))
    U = np.array([np.interp(X[i], fine, G[i]) for i in range(n_functions)])
    return DeepOnetDataset(A, X[:, :, None], U)


def deeponet_loss(model: DeepOnet, a, x, u, branch=None, trunk=None):
    pred = deeponet_forward(model, a, x, branch, trunk)
    return ad.mean(ad.square(ad.sub(pred, u)))


def pideeponet_loss(model: DeepOnet, data, residual_data, residual: Callable, lam: float = 1.0, tape=None):
    """Pi = Pi_d + lam Pi_p.

    ``data`` is an (a, x, u) triple batch, ``residual_data`` an (a, x)
    batch that may come from different functions and points.
    ``residual(a_values, x_var, u_var, d_dx)`` returns the PDE residual for
    the network output, with ``d_dx`` the derivative of a tape quantity
    with respect to the trunk input. Returns (Pi, Pi_d, Pi_p).
    """
    tape = ad.Tape() if tape is None else tape
    a, x, u = data
    pd = deeponet_loss(model, a, x, u)
    if lam == 0:
        return pd, pd, 0.0
    ar, xr = residual_data
    xv = tape.leaf(np.asarray(xr, dtype=np.float64).reshape(len(xr), -1))
    arrays = [tape.leaf(p) for p in model.arrays()] if not any(isinstance(p, ad.Var) for p in model.arrays()) else model.arrays()
    nb = len(model.branch.arrays())
    br = nn.MlpParams.from_arrays(arrays[:nb])
    tr = nn.MlpParams.from_arrays(arrays[nb:])
    ur = deeponet_forward(model, np.asarray(ar, dtype=np.float64), xv, br, tr)

    def d_dx(f):
        (g,) = ad.grad(ad.sum(f), [xv], create_graph=True)
        return ad.reshape(g, (len(xr),))

    pp = ad.mean(ad.square(residual(np.asarray(ar), xv, ur, d_dx)))
    return ad.add(pd, ad.mul(pp, lam)), pd, pp


def relative_l2(pred, target) -> float:
    """Mean over samples of ||pred - target|| / ||target||, each sample flattened."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    pred = pred.reshape(len(pred), -1) if pred.ndim > 1 else pred[None]
    target = target.reshape(len(target), -1) if target.ndim > 1 else target[None]
    return float(np.mean(np.linalg.norm(pred - target, axis=1) / np.linalg.norm(target, axis=1)))


@dataclass
class DeepOnetResult:
    model: DeepOnet
    history: list = field(default_factory=list)
    status: str = "ok"
    seconds: float = 0.0


def deeponet_train(
    model: DeepOnet,
    data: DeepOnetDataset,
    iterations: int = 3000,
    optimizer: OptimizerState | str | None = None,
    batch_size: int | None = None,
    seed: int = 0,
) -> DeepOnetResult:
    """Minimise the mean squared triple loss.

    ``optimizer`` is an :class:`OptimizerState` (full batch unless
    ``batch_size``) or ``"lbfgs"``, which hands the full-batch loss and its
    tape gradient to scipy's L-BFGS for ``iterations`` iterations.
    """
    t0 = time.perf_counter()
    optimizer = OptimizerState("adam", 1e-3) if optimizer is None else optimizer
    a, x, u = data.triples()
    if len(u) == 0:
        raise ValueError("empty dataset")
    n = len(u)
    rng = Rng(seed)
    arrays = [np.array(p) for p in model.arrays()]
    sizes = [p.size for p in arrays]
    shapes = [p.shape for p in arrays]
    theta = np.concatenate([p.reshape(-1) for p in arrays])
    nb = len(model.branch.arrays())

    def unflat(t):
        out, k = [], 0
        for sz, sh in zip(sizes, shapes):
            out.append(t[k : k + sz].reshape(sh))
            k += sz
        return out

    def loss_grad(t, idx):
        tape = ad.Tape()
        leaves = [tape.leaf(p) for p in unflat(t)]
        br = nn.MlpParams.from_arrays(leaves[:nb])
        tr = nn.MlpParams.from_arrays(leaves[nb:])
        L = deeponet_loss(model, a[idx], x[idx], u[idx], br, tr)
        lv = float(L.value)
        if not math.isfinite(lv):
            return lv, None
        return lv, np.concatenate([g.reshape(-1) for g in ad.grad(L, leaves)])

    res = DeepOnetResult(model)
    if isinstance(optimizer, str):
        if optimizer != "lbfgs":
            raise ValueError(f"unknown optimizer {optimizer!r}")
        last = {}

        def fg(t):
            lv, g = loss_grad(t, slice(None))
            if g is None:
                raise FloatingPointError("non-finite loss")
            last["loss"] = lv
            return lv, g

        def record(_):
            res.history.append((len(res.history), last["loss"]))

        try:
            out = minimize(fg, theta, jac=True, method="L-BFGS-B", callback=record,
                           options={"maxiter": iterations, "gtol": 0.0, "ftol": 0.0})
            theta = out.x
        except FloatingPointError:
            res.status = "diverged"
    else:
        for it in range(iterations):
            idx = slice(None) if batch_size is None else rng.permutation(n)[:batch_size]
            lv, g = loss_grad(theta, idx)
            res.history.append((it, lv))
            if g is None:
                res.status = "diverged"
                break
            theta = step(optimizer, theta, g)
    res.model = model.with_arrays(unflat(theta))
    res.seconds = time.perf_counter() - t0
    return res
