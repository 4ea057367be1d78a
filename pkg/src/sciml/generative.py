"""Samplers, empirical statistics and Wasserstein GANs with gradient penalty.

The critic is trained to maximise

    Pi_c = mean d(x) - mean d(g(z)) - lam * mean (|grad d(x_hat)| - 1)^2

with x_hat = alpha x + (1 - alpha) g(z), alpha ~ U(0, 1) per sample, and
the generator to minimise mean d(x) - mean d(g(z)). Training alternates K
critic ascent steps with one generator descent step.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import nn
from .optim import OptimizerState, step
from .tensor import Rng

__all__ = [
    "Sampler",
    "uniform_sampler",
    "gaussian_sampler",
    "exponential_sampler",
    "sample",
    "empirical_stats",
    "WganModel",
    "CwganModel",
    "init_wgan",
    "init_cwgan",
    "wgan_objective",
    "gradient_penalty",
    "critic_objective",
    "train_wgan",
    "cwgan_objective",
    "cwgan_gradient_penalty",
    "train_cwgan",
    "GanResult",
    "generate",
    "default_test_functions",
    "weak_convergence_check",
    "write_samples_csv",
    "write_gan_metrics_csv",
]


# ---------------------------------------------------------------------------
# samplers


@dataclass(frozen=True)
class Sampler:
    """kind is 'uniform' (a, b), 'gaussian' (mean, cov) or 'exponential' (lam)."""

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind == "uniform":
            a, b = self.params
            if not b > a:
                raise ValueError(f"uniform needs b > a, got ({a}, {b})")
        elif self.kind == "gaussian":
            mean, cov = self.params
            cov = np.atleast_2d(cov)
            if cov.shape != (len(np.atleast_1d(mean)),) * 2:
                raise ValueError("covariance shape does not match the mean")
            if not np.allclose(cov, cov.T):
                raise ValueError("covariance must be symmetric")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise ValueError("covariance must be positive definite") from None
        elif self.kind == "exponential":
            (lam,) = self.params
            if not lam > 0:
                raise ValueError(f"exponential rate must be positive, got {lam}")
        else:
            raise ValueError(f"unknown sampler kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return len(np.atleast_1d(self.params[0])) if self.kind == "gaussian" else 1

    def draw(self, n: int, rng: Rng) -> np.ndarray:
        if n < 1:
            raise ValueError("need at least one draw")
        if self.kind == "uniform":
            a, b = self.params
            return a + (b - a) * rng.uniform(n)
        if self.kind == "exponential":
            (lam,) = self.params
            # inverse of F(x) = 1 - exp(-lam x)
            return -np.log1p(-rng.uniform(n)) / lam
        mean, cov = self.params
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        L = np.linalg.cholesky(np.atleast_2d(cov))
        z = rng.normal((n, len(mean)))
        out = mean + z @ L.T
        return out[:, 0] if np.ndim(self.params[0]) == 0 else out


def uniform_sampler(a: float = 0.0, b: float = 1.0) -> Sampler:
    return Sampler("uniform", (float(a), float(b)))


def gaussian_sampler(mean=0.0, cov=1.0) -> Sampler:
    """Scalar (mu, sigma^2) or vector mean with covariance matrix."""
    if np.ndim(mean) == 0:
        return Sampler("gaussian", (float(mean), np.array([[float(cov)]])))
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim == 0:
        cov = cov * np.eye(len(mean))
    return Sampler("gaussian", (mean, cov))


def exponential_sampler(lam: float = 1.0) -> Sampler:
    return Sampler("exponential", (float(lam),))


def sample(sampler: Sampler, n: int, seed: int | Rng = 0) -> np.ndarray:
    rng = seed if isinstance(seed, Rng) else Rng(seed)
    return sampler.draw(n, rng)


def empirical_stats(draws) -> dict:
    """Sample mean, unbiased variance and covariance (rows are draws)."""
    X = np.asarray(draws, dtype=np.float64)
    if len(X) < 1:
        raise ValueError("need at least one draw")
    X2 = X.reshape(len(X), -1)
    mean = X2.mean(axis=0)
    if len(X) < 2:
        var = np.full(X2.shape[1], np.nan)
        cov = np.full((X2.shape[1],) * 2, np.nan)
    else:
        cov = np.atleast_2d(np.cov(X2, rowvar=False, ddof=1))
        var = np.diag(cov).copy()
    if X.ndim == 1:
        return {"mean": float(mean[0]), "variance": float(var[0]), "covariance": cov}
    return {"mean": mean, "variance": var, "covariance": cov}


# ---------------------------------------------------------------------------
# models


@dataclass
class WganModel:
    gen_cfg: nn.MlpConfig
    gen: nn.MlpParams
    critic_cfg: nn.MlpConfig
    critic: nn.MlpParams
    lam: float = 10.0
    K: int = 5
    lr_d: float = 1e-3
    lr_g: float = 1e-3

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.gen_cfg.widths[-1] != self.critic_cfg.widths[0] or self.critic_cfg.widths[-1] != 1:
            raise ValueError("critic must map generator outputs to a scalar")
        if self.critic_cfg.activation not in nn.SMOOTH_ACTIVATIONS:
            raise ValueError("the gradient penalty needs a smooth critic activation")

    @property
    def n_z(self) -> int:
        return self.gen_cfg.widths[0]


@dataclass
class CwganModel:
    """Generator g(z, x) -> y and critic d(x, y) -> R."""

    gen_cfg: nn.MlpConfig
    gen: nn.MlpParams
    critic_cfg: nn.MlpConfig
    critic: nn.MlpParams
    n_z: int
    lam: float = 10.0
    K: int = 5
    lr_d: float = 1e-3
    lr_g: float = 1e-3

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        n_x = self.gen_cfg.widths[0] - self.n_z
        n_y = self.gen_cfg.widths[-1]
        if n_x < 1 or self.critic_cfg.widths[0] != n_x + n_y or self.critic_cfg.widths[-1] != 1:
            raise ValueError("critic must map (x, y) pairs to a scalar")
        if self.critic_cfg.activation not in nn.SMOOTH_ACTIVATIONS:
            raise ValueError("the gradient penalty needs a smooth critic activation")

    @property
    def n_x(self) -> int:
        return self.gen_cfg.widths[0] - self.n_z


def init_wgan(n_z: int = 2, n_x: int = 2, gen_hidden=(32, 32), critic_hidden=(32, 32), activation: str = "tanh",
              lam: float = 10.0, K: int = 5, lr_d: float = 1e-3, lr_g: float = 1e-3, seed: int = 0) -> WganModel:
    rng = Rng(seed)
    gc = nn.MlpConfig([n_z, *gen_hidden, n_x], activation)
    dc = nn.MlpConfig([n_x, *critic_hidden, 1], activation)
    return WganModel(gc, nn.init_params(gc, rng.spawn(1)), dc, nn.init_params(dc, rng.spawn(2)), lam, K, lr_d, lr_g)


def init_cwgan(n_z: int = 1, n_x: int = 1, n_y: int = 1, gen_hidden=(32, 32), critic_hidden=(32, 32),
               activation: str = "tanh", lam: float = 10.0, K: int = 5, lr_d: float = 1e-3, lr_g: float = 1e-3,
               seed: int = 0) -> CwganModel:
    rng = Rng(seed)
    gc = nn.MlpConfig([n_z + n_x, *gen_hidden, n_y], activation)
    dc = nn.MlpConfig([n_x + n_y, *critic_hidden, 1], activation)
    return CwganModel(gc, nn.init_params(gc, rng.spawn(1)), dc, nn.init_params(dc, rng.spawn(2)), n_z, lam, K,
                      lr_d, lr_g)


def _rows(a):
    shape = ad._shape(a)
    return ad.reshape(a, (shape[0], 1)) if len(shape) == 1 else a


def _critic(model, params, x):
    return ad.reshape(nn.mlp_forward(model.critic_cfg, params, _rows(x)), (ad._shape(x)[0],))


def _check_batches(*batches):
    n = {ad._shape(b)[0] for b in batches}
    if len(n) != 1 or 0 in n:
        raise ValueError("batches must be non-empty and of equal size")


def wgan_objective(model: WganModel, real, z, gen=None, critic=None):
    """Pi = mean d(x_real) - mean d(g(z))."""
    _check_batches(real, z)
    gen = model.gen if gen is None else gen
    critic = model.critic if critic is None else critic
    fake = nn.mlp_forward(model.gen_cfg, gen, _rows(z))
    return ad.sub(ad.mean(_critic(model, critic, real)), ad.mean(_critic(model, critic, fake)))


def _penalty_at(d_of, x_hat):
    """mean_i (|grad d(x_hat_i)| - 1)^2 with the input gradient recorded on the tape."""
    tape = ad._find_tape([x_hat])
    if tape is None:
        tape = ad.Tape()
        x_hat = tape.leaf(x_hat)
    elif not isinstance(x_hat, ad.Var):
        x_hat = tape.const(x_hat)
    (g,) = ad.grad(ad.sum(d_of(x_hat)), [x_hat], create_graph=True)
    norms = ad.sqrt(ad.sum(ad.square(g), axis=1))
    return ad.mean(ad.square(ad.sub(norms, 1.0)))


def gradient_penalty(model: WganModel, real, fake, rng: Rng | int = 0, critic=None, alpha=None):
    """mean_i (|d d / d x_hat (x_hat_i)| - 1)^2 at x_hat = alpha_i x_i + (1 - alpha_i) fake_i.

    One alpha ~ U(0, 1) per sample unless ``alpha`` is given.
    """
    _check_batches(real, fake)
    critic = model.critic if critic is None else critic
    real, fake = _rows(real), _rows(fake)
    n = ad._shape(real)[0]
    if alpha is None:
        alpha = (rng if isinstance(rng, Rng) else Rng(rng)).uniform(n)
    alpha = np.asarray(alpha, dtype=np.float64).reshape(n, 1)
    x_hat = ad.add(ad.mul(real, alpha), ad.mul(fake, 1.0 - alpha))
    if not isinstance(x_hat, ad.Var) and isinstance(critic.layers[0][0], ad.Var):
        x_hat = critic.layers[0][0].tape.leaf(x_hat)
    return _penalty_at(lambda xh: _critic(model, critic, xh), x_hat)


def critic_objective(model: WganModel, real, z, rng: Rng, gen=None, critic=None):
    """Pi_c = Pi - lam * GP; returns (Pi_c, Pi, GP)."""
    gen = model.gen if gen is None else gen
    critic = model.critic if critic is None else critic
    pi = wgan_objective(model, real, z, gen, critic)
    fake = nn.mlp_forward(model.gen_cfg, gen, _rows(z))
    gp = gradient_penalty(model, real, ad._val(fake), rng, critic)
    return ad.sub(pi, ad.mul(gp, model.lam)), pi, gp


def cwgan_objective(model: CwganModel, x, y, z, gen=None, critic=None):
    """mean d(x, y) - mean d(x, g(z, x))."""
    _check_batches(x, y, z)
    gen = model.gen if gen is None else gen
    critic = model.critic if critic is None else critic
    x, y, z = _rows(x), _rows(y), _rows(z)
    y_fake = nn.mlp_forward(model.gen_cfg, gen, ad.concat([z, x], axis=1))
    real = _critic(model, critic, ad.concat([x, y], axis=1))
    fake = _critic(model, critic, ad.concat([x, y_fake], axis=1))
    return ad.sub(ad.mean(real), ad.mean(fake))


def cwgan_gradient_penalty(model: CwganModel, x, y, y_fake, rng: Rng | int = 0, critic=None, alpha=None):
    """Penalty on the joint (x, y) input gradient of the critic at (x, y_hat).

    Only y is interpolated, y_hat = alpha y + (1 - alpha) y_fake; x stays at
    its real values.
    """
    _check_batches(x, y, y_fake)
    critic = model.critic if critic is None else critic
    x, y, y_fake = _rows(ad._val(x)), _rows(ad._val(y)), _rows(ad._val(y_fake))
    n = y.shape[0]
    if alpha is None:
        alpha = (rng if isinstance(rng, Rng) else Rng(rng)).uniform(n)
    alpha = np.asarray(alpha, dtype=np.float64).reshape(n, 1)
    xy_hat = np.concatenate([x, alpha * y + (1.0 - alpha) * y_fake], axis=1)
    if isinstance(critic.layers[0][0], ad.Var):
        xy_hat = critic.layers[0][0].tape.leaf(xy_hat)
    return _penalty_at(lambda v: _critic(model, critic, v), xy_hat)


# ---------------------------------------------------------------------------
# training


@dataclass
class GanResult:
    model: object
    history: list = field(default_factory=list)  # (epoch, Pi, GP)
    status: str = "ok"
    seconds: float = 0.0


def _optimizer(kind: str, lr: float, schedule: str = "constant", horizon: int | None = None) -> OptimizerState:
    if kind == "gd":
        return OptimizerState("gd", lr, schedule, horizon=horizon)
    if kind == "adam":
        return OptimizerState("adam", lr, schedule, beta1=0.0, beta2=0.9, horizon=horizon)
    raise ValueError(f"unknown optimizer {kind!r}")


def _alternate(model, epochs, n_data, batch_size, seed, optimizer, schedule, critic_step, gen_step, callback=None):
    """Algorithm skeleton shared by the WGAN and the conditional WGAN.

    An epoch is one outer iteration: K critic steps, then one generator
    step. With ``batch_size`` set, every step draws its own random
    mini-batch of the data; otherwise every step sees the full dataset.
    ``critic_step(gen, critic, idx, rng)`` returns (Pi_c, Pi, GP) on a tape
    whose leaves are the critic parameters; ``gen_step(gen, critic, idx,
    rng)`` returns Pi with generator leaves.
    """
    t0 = time.perf_counter()
    rng = Rng(seed)
    gcfg, dcfg = model.gen_cfg, model.critic_cfg
    theta_g, theta_d = model.gen.flat(), model.critic.flat()
    opt_d = _optimizer(optimizer, model.lr_d, schedule, model.K * epochs)
    opt_g = _optimizer(optimizer, model.lr_g, schedule, epochs)
    res = GanResult(model)
    bs = n_data if batch_size is None else min(batch_size, n_data)

    def batch(r):
        return np.arange(n_data) if bs == n_data else np.sort(r.choice(n_data, bs))

    for epoch in range(1, epochs + 1):
        er = rng.spawn(epoch)
        gen = nn.MlpParams.from_flat(gcfg.widths, theta_g)
        for k in range(model.K):
            kr = er.spawn(k)
            tape = ad.Tape()
            critic, leaves = nn.MlpParams.from_flat(dcfg.widths, theta_d).on_tape(tape)
            pc, pi, gp = critic_step(gen, critic, batch(kr), kr)
            grads = ad.grad(pc, leaves)
            theta_d = step(opt_d, theta_d, -np.concatenate([a.reshape(-1) for a in grads]))  # ascent
        critic = nn.MlpParams.from_flat(dcfg.widths, theta_d)
        tape = ad.Tape()
        gen_v, leaves = nn.MlpParams.from_flat(gcfg.widths, theta_g).on_tape(tape)
        gr = er.spawn(model.K)
        pi_g = gen_step(gen_v, critic, batch(gr), gr)
        grads = ad.grad(pi_g, leaves)
        theta_g = step(opt_g, theta_g, np.concatenate([a.reshape(-1) for a in grads]))
        res.history.append((epoch, float(ad._val(pi)), float(ad._val(gp))))
        if callback is not None:
            callback(epoch, nn.MlpParams.from_flat(gcfg.widths, theta_g))
        if not (np.all(np.isfinite(theta_g)) and np.all(np.isfinite(theta_d))):
            res.status = "diverged"
            break
    res.seconds = time.perf_counter() - t0
    return theta_g, theta_d, res


def _latent(rng: Rng, n: int, n_z: int) -> np.ndarray:
    return rng.spawn(7).normal((n, n_z))


def train_wgan(model: WganModel, data, epochs: int = 2000, seed: int = 0, batch_size: int | None = None,
               optimizer: str = "gd", schedule: str = "constant", callback: Callable | None = None) -> GanResult:
    """Alternating steepest ascent (critic, K steps on Pi_c) and descent (generator, one step on Pi).

    ``optimizer='gd'`` is plain steepest ascent/descent with the model's
    learning rates; ``'adam'`` swaps in Adam updates with the same rates.
    Latent draws and penalty weights are fresh for every step and fully
    determined by ``seed``.
    """
    data = np.asarray(data, dtype=np.float64)
    data = data[:, None] if data.ndim == 1 else data
    if len(data) == 0:
        raise ValueError("empty dataset")

    def critic_step(gen, critic, idx, r):
        z = _latent(r, len(idx), model.n_z)
        return critic_objective(model, data[idx], z, r.spawn(8), gen, critic)

    def gen_step(gen, critic, idx, r):
        z = _latent(r, len(idx), model.n_z)
        return wgan_objective(model, data[idx], z, gen, critic)

    tg, td, res = _alternate(model, epochs, len(data), batch_size, seed, optimizer, schedule, critic_step, gen_step, callback)
    if res.status == "ok":
        res.model = WganModel(model.gen_cfg, nn.MlpParams.from_flat(model.gen_cfg.widths, tg), model.critic_cfg,
                              nn.MlpParams.from_flat(model.critic_cfg.widths, td), model.lam, model.K,
                              model.lr_d, model.lr_g)
    return res


def train_cwgan(model: CwganModel, x, y, epochs: int = 2000, seed: int = 0, batch_size: int | None = None,
                optimizer: str = "gd", schedule: str = "constant", callback: Callable | None = None) -> GanResult:
    """The same alternating scheme on the conditional objective."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x = x[:, None] if x.ndim == 1 else x
    y = y[:, None] if y.ndim == 1 else y
    if len(x) == 0 or len(x) != len(y):
        raise ValueError("need a non-empty paired dataset")

    def critic_step(gen, critic, idx, r):
        z = _latent(r, len(idx), model.n_z)
        pi = cwgan_objective(model, x[idx], y[idx], z, gen, critic)
        y_fake = nn.mlp_forward(model.gen_cfg, gen, np.concatenate([z, x[idx]], axis=1))
        gp = cwgan_gradient_penalty(model, x[idx], y[idx], y_fake, r.spawn(8), critic)
        return ad.sub(pi, ad.mul(gp, model.lam)), pi, gp

    def gen_step(gen, critic, idx, r):
        z = _latent(r, len(idx), model.n_z)
        return cwgan_objective(model, x[idx], y[idx], z, gen, critic)

    tg, td, res = _alternate(model, epochs, len(x), batch_size, seed, optimizer, schedule, critic_step, gen_step, callback)
    if res.status == "ok":
        res.model = CwganModel(model.gen_cfg, nn.MlpParams.from_flat(model.gen_cfg.widths, tg), model.critic_cfg,
                               nn.MlpParams.from_flat(model.critic_cfg.widths, td), model.n_z, model.lam, model.K,
                               model.lr_d, model.lr_g)
    return res


def generate(model, n: int, seed: int = 0, x=None) -> np.ndarray:
    """Push n standard-normal latent draws through the generator (conditioned on ``x`` for a cWGAN)."""
    z = Rng(seed).normal((n, model.n_z))
    if isinstance(model, CwganModel):
        x = np.asarray(x, dtype=np.float64).reshape(n, -1)
        z = np.concatenate([z, x], axis=1)
    return nn.mlp_forward(model.gen_cfg, model.gen, z)


# ---------------------------------------------------------------------------
# weak convergence


def default_test_functions(dim: int) -> list:
    """Bounded continuous test functions: clipped coordinates, their products, cosines of projections."""
    fns = []
    for i in range(dim):
        fns.append((f"clip(x{i + 1})", lambda X, i=i: np.clip(X[:, i], -3.0, 3.0)))
        fns.append((f"tanh(x{i + 1})", lambda X, i=i: np.tanh(X[:, i])))
    for i in range(dim):
        for j in range(i + 1, dim):
            fns.append((f"tanh(x{i + 1})tanh(x{j + 1})", lambda X, i=i, j=j: np.tanh(X[:, i]) * np.tanh(X[:, j])))
    fns.append(("cos(sum x)", lambda X: np.cos(X.sum(axis=1))))
    if dim > 1:
        fns.append(("cos(x1 - x2)", lambda X: np.cos(X[:, 0] - X[:, 1])))
    return fns


def weak_convergence_check(generator: Callable, target: Sampler, test_functions: Sequence | None = None,
                           n: int = 100_000, seed: int = 0) -> list:
    """Monte-Carlo gaps |E l(g(Z)) - E l(X)| with n draws from each side.

    ``generator(n, rng)`` returns n generated samples. Each row is
    (name, generated mean, target mean, gap, standard error, 3 / sqrt(n)).
    """
    rng = Rng(seed)
    G = np.asarray(generator(n, rng.spawn(1)), dtype=np.float64)
    X = np.asarray(target.draw(n, rng.spawn(2)), dtype=np.float64)
    G = G.reshape(n, -1)
    X = X.reshape(n, -1)
    fns = default_test_functions(X.shape[1]) if test_functions is None else test_functions
    rows = []
    for name, fn in fns:
        a, b = fn(G), fn(X)
        se = math.sqrt(np.var(a, ddof=1) / n + np.var(b, ddof=1) / n)
        rows.append((name, float(a.mean()), float(b.mean()), float(abs(a.mean() - b.mean())), se, 3.0 / math.sqrt(n)))
    return rows


def write_samples_csv(path, samples) -> None:
    S = np.asarray(samples, dtype=np.float64)
    S = S.reshape(len(S), -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(S.shape[1])])
        for row in S:
            w.writerow([repr(float(v)) for v in row])


def write_gan_metrics_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "objective", "penalty"])
        for e, pi, gp in history:
            w.writerow([e, repr(pi), repr(gp)])
