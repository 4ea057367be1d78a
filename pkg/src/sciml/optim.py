"""First-order optimizers, stochastic training loops, data splits and grid search.

Optimizers act on a flat parameter vector ``theta``. The update rule is

    theta_{k+1} = theta_k - eta_k * g_k

with g_k the raw gradient (gd), its exponential moving average
(momentum), or the moving average rescaled per component by the running
second moment (adam).
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Rng

__all__ = [
    "OptimizerState",
    "gd_step",
    "momentum_step",
    "adam_step",
    "step",
    "learning_rate",
    "minibatch_train",
    "TrainResult",
    "DataSplit",
    "split_dataset",
    "grid_search",
    "write_history_csv",
    "sgd_toy",
    "SGD_TOY_A",
    "SGD_TOY_C",
    "sgd_toy_minimizer",
]


@dataclass
class OptimizerState:
    """Optimizer kind, hyper-parameters and moment accumulators.

    ``g`` and ``G`` start at zero, so the first update already mixes in
    ``(1 - beta)`` of the gradient. Adam's bias correction is off unless
    ``bias_correction`` is set.
    """

    kind: str = "gd"
    lr: float = 1e-3
    schedule: str = "constant"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    bias_correction: bool = False
    horizon: int | None = None  # total steps, for the linear schedule
    k: int = 0
    g: np.ndarray | None = None
    G: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("gd", "momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.schedule not in ("constant", "inverse_sqrt", "linear"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "linear" and not (self.horizon and self.horizon > 0):
            raise ValueError("the linear schedule needs a positive horizon")

    def reset(self):
        self.k = 0
        self.g = None
        self.G = None


def learning_rate(state: OptimizerState) -> float:
    """eta for the current step.

    inverse_sqrt gives eta / sqrt(k + 1); linear decays from eta to zero,
    eta (1 - k / horizon), and stays at zero past the horizon.
    """
    if state.schedule == "inverse_sqrt":
        return state.lr / math.sqrt(state.k + 1)
    if state.schedule == "linear":
        return state.lr * max(0.0, 1.0 - state.k / state.horizon)
    return state.lr


def _check(theta, grad):
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if theta.shape != grad.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match parameter shape {theta.shape}")
    return theta, grad


def gd_step(state: OptimizerState, theta, grad) -> np.ndarray:
    theta, grad = _check(theta, grad)
    eta = learning_rate(state)
    state.k += 1
    return theta - eta * grad


def momentum_step(state: OptimizerState, theta, grad) -> np.ndarray:
    theta, grad = _check(theta, grad)
    g_prev = np.zeros_like(theta) if state.g is None else state.g
    state.g = state.beta1 * g_prev + (1.0 - state.beta1) * grad
    eta = learning_rate(state)
    state.k += 1
    return theta - eta * state.g


def adam_step(state: OptimizerState, theta, grad) -> np.ndarray:
    theta, grad = _check(theta, grad)
    g_prev = np.zeros_like(theta) if state.g is None else state.g
    G_prev = np.zeros_like(theta) if state.G is None else state.G
    state.g = state.beta1 * g_prev + (1.0 - state.beta1) * grad
    state.G = state.beta2 * G_prev + (1.0 - state.beta2) * grad * grad
    g, G = state.g, state.G
    if state.bias_correction:
        g = g / (1.0 - state.beta1 ** (state.k + 1))
        G = G / (1.0 - state.beta2 ** (state.k + 1))
    eta = learning_rate(state) / (np.sqrt(G) + state.eps)
    state.k += 1
    return theta - eta * g


_STEPS = {"gd": gd_step, "momentum": momentum_step, "adam": adam_step}


def step(state: OptimizerState, theta, grad) -> np.ndarray:
    return _STEPS[state.kind](state, theta, grad)


@dataclass
class TrainResult:
    theta: np.ndarray
    history: list = field(default_factory=list)  # rows (epoch, train_loss, val_loss)
    status: str = "ok"


def minibatch_train(
    theta0,
    n: int,
    loss_grad: Callable,
    state: OptimizerState,
    epochs: int,
    n_batches: int = 1,
    seed: int | Rng = 0,
    val_loss: Callable | None = None,
    train_loss: Callable | None = None,
) -> TrainResult:
    """Epoch / shuffle / batch loop.

    ``loss_grad(theta, idx)`` returns the batch loss and gradient over the
    samples ``idx``. Each epoch shuffles ``range(n)`` (Fisher-Yates) and
    splits it into ``n_batches`` near-equal batches (the first ones get the
    extra sample when ``n_batches`` does not divide ``n``). With
    ``n_batches == 1`` no shuffle happens, which makes the loop identical to
    full-batch descent.

    The history records, per epoch, the full training loss (``train_loss``
    if given, otherwise the mean of the batch losses seen) and the
    validation loss (NaN without ``val_loss``). A non-finite loss stops the
    run with status ``"diverged"``.
    """
    if n < 1:
        raise ValueError("empty dataset")
    if not 1 <= n_batches <= n:
        raise ValueError(f"n_batches must lie in [1, {n}]")
    rng = seed if isinstance(seed, Rng) else Rng(seed)
    theta = np.array(theta0, dtype=np.float64)
    res = TrainResult(theta)
    full = np.arange(n)
    for epoch in range(epochs):
        order = full if n_batches == 1 else rng.permutation(n)
        batch_losses = []
        for idx in np.array_split(order, n_batches):
            lval, g = loss_grad(theta, idx)
            batch_losses.append(float(lval))
            if not np.isfinite(lval) or not np.all(np.isfinite(g)):
                res.status = "diverged"
                break
            theta = step(state, theta, g)
        tl = float(train_loss(theta)) if train_loss is not None else float(np.mean(batch_losses))
        vl = float(val_loss(theta)) if val_loss is not None else float("nan")
        res.history.append((epoch, tl, vl))
        if res.status == "diverged" or not np.isfinite(tl) or not np.all(np.isfinite(theta)):
            res.status = "diverged"
            break
    res.theta = theta
    return res


def write_history_csv(path, history: Sequence, header=("epoch", "train_loss", "val_loss")) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in history:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


@dataclass
class DataSplit:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


def split_dataset(n: int, proportions=(0.6, 0.2, 0.2), seed: int = 0) -> DataSplit:
    """Shuffled three-way split.

    Validation and test sizes are ``floor(p * n)``; the remainder goes to
    training.
    """
    p = [float(v) for v in proportions]
    if len(p) != 3 or any(v < 0 for v in p) or abs(sum(p) - 1.0) > 1e-12:
        raise ValueError("proportions must be three non-negative numbers summing to 1")
    parts = sum(1 for v in p if v > 0)
    if n < parts:
        raise ValueError(f"cannot split {n} samples into {parts} parts")
    n_val = int(math.floor(p[1] * n))
    n_test = int(math.floor(p[2] * n))
    n_train = n - n_val - n_test
    perm = Rng(seed).permutation(n)
    return DataSplit(
        np.sort(perm[:n_train]),
        np.sort(perm[n_train : n_train + n_val]),
        np.sort(perm[n_train + n_val :]),
    )


def grid_search(grid: dict, train_fn: Callable, val_metric: Callable, test_metric: Callable | None = None):
    """Exhaustive search over the Cartesian product of ``grid``.

    ``train_fn(**point)`` returns a model, ``val_metric(model)`` its
    validation loss. Ties go to the point seen first. Returns
    ``(best_point, table, test_loss)`` where the test loss is computed only
    for the winner (None without ``test_metric``).
    """
    keys = list(grid)
    combos = list(itertools.product(*(grid[k] for k in keys)))
    if not keys or not combos:
        raise ValueError("empty grid")
    table = []
    best, best_val, best_model = None, math.inf, None
    for combo in combos:
        point = dict(zip(keys, combo))
        model = train_fn(**point)
        v = float(val_metric(model))
        table.append({**point, "val_loss": v})
        if v < best_val or best is None:
            best, best_val, best_model = point, v, model
    test = float(test_metric(best_model)) if test_metric is not None else None
    return best, table, test


# SGD toy problem: Pi_i = A[i,0](t1 - C[i,0])^2 + A[i,1](t2 - C[i,1])^2.
SGD_TOY_A = np.array([[1.0, 1.0], [1.0, 0.5], [0.7, 0.5], [0.7, 0.5]])
SGD_TOY_C = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])


def sgd_toy_minimizer() -> np.ndarray:
    """Minimizer of sum_i Pi_i from the normal equations (diagonal Hessian)."""
    H = np.diag(2.0 * SGD_TOY_A.sum(axis=0))
    rhs = 2.0 * (SGD_TOY_A * SGD_TOY_C).sum(axis=0)
    return np.linalg.solve(H, rhs)


def sgd_toy(
    lr: float = 0.4,
    schedule: str = "inverse_sqrt",
    iterations: int = 10_000,
    theta0=(-1.0, 2.0),
    seed: int = 0,
    sampling: str = "shuffle",
) -> np.ndarray:
    """Single-sample SGD on the four-quadratic toy; returns all iterates.

    ``sampling="shuffle"`` visits the four losses in a fresh random order
    each epoch; ``"iid"`` draws the index independently at every step.
    """
    if sampling not in ("shuffle", "iid"):
        raise ValueError(f"unknown sampling {sampling!r}")
    state = OptimizerState("gd", lr, schedule)
    rng = Rng(seed)
    theta = np.array(theta0, dtype=np.float64)
    path = [theta]
    order: list = []
    for _ in range(iterations):
        if sampling == "iid":
            i = rng.integer(4)
        else:
            if not order:
                order = list(rng.permutation(4))
            i = order.pop(0)
        g = 2.0 * SGD_TOY_A[i] * (theta - SGD_TOY_C[i])
        theta = gd_step(state, theta, g)
        path.append(theta)
    return np.array(path)
