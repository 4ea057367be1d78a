"""ResNets as forward Euler steps, and Neural ODEs trained through unrolled integrators.

Time nodes are t^(l) = l dt for l = 0..L+1 with (L + 1) dt = T. The
right-hand-side network sees (x, t / T), so time enters in [0, 1].
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import nn
from .optim import OptimizerState, step
from .tensor import Rng

__all__ = [
    "OdeSystem",
    "mlp_rhs",
    "integrate",
    "IntegrationError",
    "resnet_ode_equivalence",
    "node_loss",
    "node_train",
    "NodeResult",
    "refinement_study",
    "write_trajectory_csv",
]


class IntegrationError(FloatingPointError):
    """A non-finite state appeared; ``step`` is the offending step index."""

    def __init__(self, step_index: int):
        super().__init__(f"non-finite state at step {step_index}")
        self.step = step_index


@dataclass
class OdeSystem:
    """x' = V(x, t) on [0, T] with a uniform step dt.

    ``rhs(x, t)`` takes a batch of states (B, state_dim) and a scalar time
    and returns (B, state_dim); it may be any callable built from
    :mod:`autodiff` operations.
    """

    rhs: Callable
    state_dim: int
    T: float = 1.0
    dt: float = 0.1

    def __post_init__(self):
        if not self.dt > 0 or not self.T > 0:
            raise ValueError("T and dt must be positive")

    @property
    def n_steps(self) -> int:
        n = int(round(self.T / self.dt))
        if n < 1 or abs(n * self.dt - self.T) > 1e-9 * self.T:
            raise ValueError(f"T={self.T} is not a whole number of steps dt={self.dt}")
        return n


def mlp_rhs(cfg: nn.MlpConfig, params: nn.MlpParams, T: float = 1.0) -> Callable:
    """V(x, t) = MLP([x, t / T]); widths[0] must be state_dim + 1."""
    if cfg.widths[0] != cfg.widths[-1] + 1:
        raise ValueError(f"rhs network maps {cfg.widths[0]} -> {cfg.widths[-1]}; need state_dim + 1 -> state_dim")

    def V(x, t):
        B = ad._shape(x)[0]
        tt = np.full((B, 1), t / T)
        return nn.mlp_forward(cfg, params, ad.concat([x, tt], axis=1))

    return V


def _as_states(x0, d):
    shape = ad._shape(x0)
    if len(shape) == 1:
        if shape[0] != d:
            raise ValueError(f"state has {shape[0]} components, system expects {d}")
        return ad.reshape(x0, (1, d)), True
    if len(shape) != 2 or shape[1] != d:
        raise ValueError(f"states of shape {shape} do not match state_dim={d}")
    return x0, False


def integrate(system: OdeSystem, x0, method: str = "rk4") -> list:
    """Explicit integration returning every state x^(0), ..., x^(L+1).

    euler: x^(l) = x^(l-1) + dt V(x^(l-1), t^(l)), the right-hand side
    evaluated at the new time node. rk4: the classical four-stage scheme
    started at t^(l-1). Works on arrays and on tape variables.
    """
    if method not in ("euler", "rk4"):
        raise ValueError(f"unknown method {method!r}")
    x, single = _as_states(x0, system.state_dim)
    V, h = system.rhs, system.dt
    traj = [x]
    for l in range(1, system.n_steps + 1):
        if method == "euler":
            x = ad.add(x, ad.mul(V(x, l * h), h))
        else:
            t = (l - 1) * h
            k1 = V(x, t)
            k2 = V(ad.add(x, ad.mul(k1, h / 2)), t + h / 2)
            k3 = V(ad.add(x, ad.mul(k2, h / 2)), t + h / 2)
            k4 = V(ad.add(x, ad.mul(k3, h)), t + h)
            incr = ad.add(ad.add(k1, ad.mul(k2, 2.0)), ad.add(ad.mul(k3, 2.0), k4))
            x = ad.add(x, ad.mul(incr, h / 6))
        if not np.all(np.isfinite(ad._val(x))):
            raise IntegrationError(l)
        traj.append(x)
    if single:
        traj = [ad.reshape(s, (system.state_dim,)) for s in traj]
    return traj


def resnet_ode_equivalence(cfg: nn.MlpConfig, params: nn.MlpParams, dt: float = 1.0, x=None, seed: int = 0) -> float:
    """Max deviation between ResNet hidden states and Euler steps with per-step parameters.

    Hidden layers 2..L of the ResNet are x^(l) = x^(l-1) + sigma(W^(l) x^(l-1) + b^(l)).
    Euler with V^(l)(x) = sigma(W^(l) x + b^(l)) / dt and step dt, started
    from the first hidden state, must reproduce them.
    """
    if len(set(cfg.widths)) != 1:
        raise ValueError(f"the ResNet/ODE correspondence needs d = D = H, got widths {cfg.widths}")
    H = cfg.widths[0]
    if x is None:
        x = Rng(seed).normal((8, H))
    _, _, xs = nn._trace(cfg, params, np.asarray(x, dtype=np.float64), True)
    state = xs[1]
    dev = 0.0
    for l in range(2, cfg.depth + 1):
        W, b = params.layers[l - 1]
        V = nn.activation_apply(cfg.activation, state @ W.T + b, cfg.alpha) / dt
        state = state + dt * V
        dev = max(dev, float(np.max(np.abs(state - xs[l]))))
    return dev


def node_loss(system: OdeSystem, X, Y, method: str = "rk4"):
    """Pi = (1/N) sum_i |x_i(T) - y_i|^2 through the unrolled integrator."""
    xT = integrate(system, X, method)[-1]
    return ad.div(ad.sum(ad.square(ad.sub(xT, Y))), len(ad._val(X)))


@dataclass
class NodeResult:
    cfg: nn.MlpConfig
    params: nn.MlpParams
    T: float
    dt: float
    method: str
    history: list = field(default_factory=list)
    status: str = "ok"
    seconds: float = 0.0

    def system(self, dt: float | None = None) -> OdeSystem:
        d = self.cfg.widths[-1]
        return OdeSystem(mlp_rhs(self.cfg, self.params, self.T), d, self.T, self.dt if dt is None else dt)

    def predict(self, X, dt: float | None = None) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return integrate(self.system(dt), X, self.method)[-1]


def node_train(
    cfg: nn.MlpConfig,
    X,
    Y,
    T: float = 1.0,
    dt: float = 0.1,
    method: str = "rk4",
    optimizer: OptimizerState | None = None,
    iterations: int = 1000,
    seed: int = 0,
    params: nn.MlpParams | None = None,
) -> NodeResult:
    """Fit the rhs network so that the flow map over [0, T] sends X to Y.

    Discretise-then-optimise: gradients come from backpropagating through
    every integrator stage. The parameter count depends only on ``cfg``.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim == 1:
        X, Y = X[:, None], Y[:, None]
    if X.shape != Y.shape:
        raise ValueError(f"inputs {X.shape} and targets {Y.shape} must have the same shape")
    if cfg.widths[0] != X.shape[1] + 1 or cfg.widths[-1] != X.shape[1]:
        raise ValueError(f"rhs widths {cfg.widths} do not fit state dimension {X.shape[1]}")
    t0 = time.perf_counter()
    optimizer = OptimizerState("adam", 1e-2) if optimizer is None else optimizer
    params = nn.init_params(cfg, Rng(seed)) if params is None else params
    theta = params.flat()
    res = NodeResult(cfg, params, T, dt, method)
    for it in range(iterations):
        tape = ad.Tape()
        p, leaves = nn.MlpParams.from_flat(cfg.widths, theta).on_tape(tape)
        system = OdeSystem(mlp_rhs(cfg, p, T), X.shape[1], T, dt)
        try:
            L = node_loss(system, X, Y, method)
        except IntegrationError:
            res.status = "diverged"
            break
        lv = float(L.value)
        res.history.append((it, lv))
        if not math.isfinite(lv):
            res.status = "diverged"
            break
        grads = ad.grad(L, leaves)
        theta = step(optimizer, theta, np.concatenate([g.reshape(-1) for g in grads]))
    res.params = nn.MlpParams.from_flat(cfg.widths, theta)
    res.seconds = time.perf_counter() - t0
    return res


def refinement_study(system_at: Callable, x0, method: str = "rk4", dt: float = 0.1, levels: int = 4) -> dict:
    """Halve dt repeatedly and estimate the observed order from successive differences.

    ``system_at(dt)`` builds the system for a given step. Returns the final
    states, the differences |x_dt - x_{dt/2}| and the orders
    log2(diff_k / diff_{k+1}).
    """
    finals, dts = [], []
    for k in range(levels):
        h = dt / 2**k
        finals.append(np.asarray(integrate(system_at(h), x0, method)[-1]))
        dts.append(h)
    diffs = [float(np.max(np.abs(a - b))) for a, b in zip(finals[:-1], finals[1:])]
    orders = [math.log2(a / b) if b > 0 and a > 0 else float("nan") for a, b in zip(diffs[:-1], diffs[1:])]
    return {"dt": dts, "final": finals, "diffs": diffs, "orders": orders}


def write_trajectory_csv(path, trajectory, dt: float) -> None:
    """Columns t, x1, ..., xd for a single-state trajectory."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        states = [np.asarray(ad._val(s)).reshape(-1) for s in trajectory]
        w.writerow(["t"] + [f"x{i + 1}" for i in range(len(states[0]))])
        for l, s in enumerate(states):
            w.writerow([repr(l * dt)] + [repr(float(v)) for v in s])
