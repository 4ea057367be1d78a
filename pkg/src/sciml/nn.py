"""Multilayer perceptrons, residual networks, losses and gradient diagnostics.

Weights are stored ``(out, in)`` so that a layer acting on a single input
vector reads ``W @ x + b``. For a batch stored row-wise (``x`` of shape
``(B, H_in)``) the same layer is ``x @ W.T + b``. All forward functions are
written with the polymorphic ops of :mod:`sciml.autodiff`, so they accept
plain arrays or tape variables.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .tensor import Rng

__all__ = [
    "ACTIVATIONS",
    "MlpConfig",
    "MlpParams",
    "activation_apply",
    "activation_deriv",
    "init_params",
    "mlp_forward",
    "resnet_forward",
    "forward",
    "param_count",
    "softmax",
    "loss",
    "reg_penalty",
    "vanishing_gradient_report",
    "power_iteration",
    "save_checkpoint",
    "load_checkpoint",
]

ACTIVATIONS = ("linear", "relu", "leaky_relu", "logistic", "tanh", "sine")
SMOOTH_ACTIVATIONS = ("linear", "logistic", "tanh", "sine")


@dataclass
class MlpConfig:
    """Architecture of a fully connected network.

    ``widths`` lists H_0 (input) through H_{L+1} (output). With
    ``residual=True`` hidden layers 2..L carry a skip connection.
    """

    widths: Sequence[int]
    activation: str = "tanh"
    alpha: float = 0.01
    output_fn: str = "none"
    residual: bool = False

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        if len(self.widths) < 2:
            raise ValueError("widths needs at least an input and an output entry")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output_fn not in ("none", "softmax"):
            raise ValueError(f"unknown output_fn {self.output_fn!r}")
        if self.residual and len(set(self.widths[1:-1])) > 1:
            raise ValueError(f"residual networks need equal hidden widths, got {self.widths[1:-1]}")

    @property
    def depth(self) -> int:
        """Number of hidden layers L."""
        return len(self.widths) - 2


@dataclass
class MlpParams:
    """Per-layer ``(W, b)`` pairs, ``W`` of shape ``(H_l, H_{l-1})``."""

    layers: list = field(default_factory=list)

    def arrays(self) -> list:
        out = []
        for W, b in self.layers:
            out += [W, b]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([np.asarray(a).reshape(-1) for a in self.arrays()])

    @classmethod
    def from_arrays(cls, arrays: Sequence) -> "MlpParams":
        return cls([(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)])

    @classmethod
    def from_flat(cls, widths: Sequence[int], theta: np.ndarray) -> "MlpParams":
        theta = np.asarray(theta, dtype=np.float64)
        layers = []
        k = 0
        for hin, hout in zip(widths[:-1], widths[1:]):
            W = theta[k : k + hin * hout].reshape(hout, hin)
            k += hin * hout
            b = theta[k : k + hout].copy()
            k += hout
            layers.append((W.copy(), b))
        if k != theta.size:
            raise ValueError(f"flat vector has {theta.size} entries, expected {k}")
        return cls(layers)

    def on_tape(self, tape: ad.Tape) -> tuple["MlpParams", list]:
        """Leaf copies of every array; returns (params of Vars, leaf list)."""
        leaves = [tape.leaf(a) for a in self.arrays()]
        return MlpParams.from_arrays(leaves), leaves

    def copy(self) -> "MlpParams":
        return MlpParams([(np.array(W), np.array(b)) for W, b in self.layers])


def activation_apply(kind: str, xi, alpha: float = 0.01):
    if kind == "linear":
        return xi
    if kind == "relu":
        return ad.relu(xi)
    if kind == "leaky_relu":
        return ad.leaky_relu(xi, alpha)
    if kind == "logistic":
        return ad.logistic(xi)
    if kind == "tanh":
        return ad.tanh(xi)
    if kind == "sine":
        return ad.sin(xi)
    raise ValueError(f"unknown activation {kind!r}")


def activation_deriv(kind: str, xi, alpha: float = 0.01) -> np.ndarray:
    """Pointwise derivative; the ReLU family uses 0 (or alpha) at exactly 0."""
    xi = np.asarray(xi, dtype=np.float64)
    if kind == "linear":
        return np.ones_like(xi)
    if kind == "relu":
        return (xi > 0).astype(np.float64)
    if kind == "leaky_relu":
        return np.where(xi > 0, 1.0, alpha)
    if kind == "logistic":
        s = 1.0 / (1.0 + np.exp(-xi))
        return s * (1.0 - s)
    if kind == "tanh":
        return 1.0 - np.tanh(xi) ** 2
    if kind == "sine":
        return np.cos(xi)
    raise ValueError(f"unknown activation {kind!r}")


def init_params(cfg: MlpConfig, rng: Rng | int = 0, scale: float = 1.0) -> MlpParams:
    """Glorot-uniform weights on +-sqrt(6/(H_in+H_out)) times ``scale``, zero biases."""
    if not isinstance(rng, Rng):
        rng = Rng(rng)
    layers = []
    for hin, hout in zip(cfg.widths[:-1], cfg.widths[1:]):
        r = scale * math.sqrt(6.0 / (hin + hout))
        layers.append((rng.uniform((hout, hin), -r, r), np.zeros(hout)))
    return MlpParams(layers)


def param_count(cfg: MlpConfig | Sequence[int]) -> int:
    widths = cfg.widths if isinstance(cfg, MlpConfig) else list(cfg)
    return int(np.sum([(a + 1) * b for a, b in zip(widths[:-1], widths[1:])]))


def _as_batch(x, h0):
    shape = ad._shape(x)
    if len(shape) == 1:
        if shape[0] != h0:
            raise ValueError(f"input length {shape[0]} does not match H_0={h0}")
        return ad.reshape(x, (1, h0)), True
    if len(shape) != 2 or shape[1] != h0:
        raise ValueError(f"input shape {shape} does not match H_0={h0}")
    return x, False


def _affine(x, W, b):
    return ad.add(ad.matmul(x, ad.transpose(W)), b)


def _check_params(cfg, params):
    if len(params.layers) != len(cfg.widths) - 1:
        raise ValueError(f"expected {len(cfg.widths) - 1} layers, got {len(params.layers)}")
    for l, ((W, b), hin, hout) in enumerate(zip(params.layers, cfg.widths[:-1], cfg.widths[1:]), 1):
        if tuple(ad._shape(W)) != (hout, hin) or tuple(ad._shape(b)) != (hout,):
            raise ValueError(f"layer {l}: W{ad._shape(W)} b{ad._shape(b)} do not fit widths {hin}->{hout}")


def _trace(cfg: MlpConfig, params: MlpParams, x, residual: bool):
    """Forward pass keeping every pre-activation xi^(l) and state x^(l)."""
    _check_params(cfg, params)
    x, single = _as_batch(x, cfg.widths[0])
    xis, xs = [], [x]
    L = cfg.depth
    for l, (W, b) in enumerate(params.layers, 1):
        xi = _affine(xs[-1], W, b)
        xis.append(xi)
        if l == L + 1:
            out = xi
        else:
            out = activation_apply(cfg.activation, xi, cfg.alpha)
            if residual and 2 <= l <= L:
                out = ad.add(out, xs[-1])
        xs.append(out)
    y = xs[-1]
    if cfg.output_fn == "softmax":
        y = softmax(y)
    if single:
        y = ad.reshape(y, (cfg.widths[-1],))
    return y, xis, xs


def mlp_forward(cfg: MlpConfig, params: MlpParams, x):
    """x^(l) = sigma(W^(l) x^(l-1) + b^(l)), affine output layer."""
    return _trace(cfg, params, x, False)[0]


def resnet_forward(cfg: MlpConfig, params: MlpParams, x):
    """Hidden layers 2..L add their input back: x^(l) = sigma(.) + x^(l-1)."""
    if len(set(cfg.widths[1:-1])) > 1:
        raise ValueError(f"residual networks need equal hidden widths, got {cfg.widths[1:-1]}")
    return _trace(cfg, params, x, True)[0]


def forward(cfg: MlpConfig, params: MlpParams, x):
    return resnet_forward(cfg, params, x) if cfg.residual else mlp_forward(cfg, params, x)


def softmax(xi):
    """Softmax along the last axis, shifted by the (constant) row maximum."""
    m = np.max(ad._val(xi), axis=-1, keepdims=True)
    e = ad.exp(ad.sub(xi, m))
    return ad.div(e, ad.sum(e, axis=-1, keepdims=True))


CE_CLAMP = 1e-12


def loss(kind: str, predictions, targets):
    """Batch-averaged loss. A 1D prediction is treated as a batch of one.

    mse: mean over samples of ||F - y||^2; mae: mean of ||F - y||_1;
    cross_entropy: mean of -sum y log max(F, 1e-12).
    """
    pred = predictions
    y = np.asarray(targets, dtype=np.float64)
    if tuple(ad._shape(pred)) != y.shape:
        raise ValueError(f"prediction shape {ad._shape(pred)} does not match target shape {y.shape}")
    n = y.shape[0] if y.ndim > 1 else 1
    if kind == "mse":
        return ad.mul(ad.sum(ad.square(ad.sub(pred, y))), 1.0 / n)
    if kind == "mae":
        return ad.mul(ad.sum(ad.absolute(ad.sub(pred, y))), 1.0 / n)
    if kind == "cross_entropy":
        p = ad._val(pred)
        if np.any(np.abs(np.sum(p, axis=-1) - 1.0) > 1e-6):
            raise ValueError("cross_entropy needs probability vectors summing to 1")
        if not np.all((y == 0) | (y == 1)) or np.any(np.sum(y, axis=-1) != 1):
            raise ValueError("cross_entropy needs one-hot targets")
        return ad.mul(ad.sum(ad.mul(ad.log(ad.clip_min(pred, CE_CLAMP)), y)), -1.0 / n)
    raise ValueError(f"unknown loss {kind!r}")


def reg_penalty(kind: str, params, alpha: float):
    """alpha * ||theta||_1 or alpha * ||theta||_2 over all weights and biases."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if isinstance(params, MlpParams):
        arrays = params.arrays()
    elif isinstance(params, (list, tuple)):
        arrays = list(params)
    else:
        arrays = [params]
    if alpha == 0:
        return 0.0
    if kind == "l1":
        total = ad.sum(ad.absolute(arrays[0]))
        for a in arrays[1:]:
            total = ad.add(total, ad.sum(ad.absolute(a)))
        return ad.mul(total, alpha)
    if kind == "l2":
        total = ad.sum(ad.square(arrays[0]))
        for a in arrays[1:]:
            total = ad.add(total, ad.sum(ad.square(a)))
        return ad.mul(ad.sqrt(total), alpha)
    raise ValueError(f"unknown regularizer {kind!r}")


def power_iteration(W: np.ndarray, tol: float = 1e-8, max_iter: int = 500, seed: int = 0) -> float:
    """Largest singular value of ``W`` by power iteration on W^T W."""
    W = np.asarray(W, dtype=np.float64)
    v = Rng(seed).normal(W.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        w = W.T @ (W @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        new = math.sqrt(nw)
        if abs(new - sigma) <= tol * max(new, 1e-300):
            sigma = new
            break
        sigma = new
    return float(np.linalg.norm(W @ v))


@dataclass
class GradientReport:
    xi_grad_norms: list  # |dPi/dxi^(l)|, l = 1..L+1
    x_grad_norms: list  # |dPi/dx^(l)|, l = 0..L
    tau: list  # largest singular value of W^(l), l = 1..L+1
    bound: list  # prod_{m=l+1}^{L+1} tau(W^(m)) for each l

    def ratio(self, first: int = 1, last: int | None = None, which: str = "xi") -> float:
        """|g^(first)| / |g^(last)| for xi (default) or x gradients."""
        norms = self.xi_grad_norms if which == "xi" else self.x_grad_norms
        off = 1 if which == "xi" else 0
        last = len(self.xi_grad_norms) - 1 if last is None else last
        return norms[first - off] / norms[last - off]


def vanishing_gradient_report(cfg: MlpConfig, params: MlpParams, sample) -> GradientReport:
    """Per-layer gradient norms of Pi = 1/2 ||F(x) - y||^2 and singular-value bounds.

    ``sample`` is an ``(x, y)`` pair of single vectors.
    """
    x, y = sample
    tape = ad.Tape()
    p, _ = params.on_tape(tape)
    xv = tape.leaf(np.asarray(x, dtype=np.float64).reshape(1, -1))
    out, xis, xs = _trace(cfg, p, xv, cfg.residual)
    pi = ad.mul(ad.sum(ad.square(ad.sub(out, np.asarray(y, dtype=np.float64).reshape(out.shape)))), 0.5)
    grads = ad.grad(pi, xis + xs[:-1])
    nxi = len(xis)
    xi_norms = [float(np.linalg.norm(g)) for g in grads[:nxi]]
    x_norms = [float(np.linalg.norm(g)) for g in grads[nxi:]]
    tau = [power_iteration(W) for W, _ in params.layers]
    bound = [float(np.prod(tau[l + 1 :])) for l in range(len(tau))]
    return GradientReport(xi_norms, x_norms, tau, bound)


def to_jsonable(cfg: MlpConfig, params: MlpParams) -> dict:
    return {
        "widths": list(cfg.widths),
        "activation": cfg.activation,
        "alpha": cfg.alpha,
        "output_fn": cfg.output_fn,
        "residual": cfg.residual,
        "layers": [{"W": np.asarray(W).tolist(), "b": np.asarray(b).tolist()} for W, b in params.layers],
    }


def from_jsonable(doc: dict) -> tuple[MlpConfig, MlpParams]:
    cfg = MlpConfig(
        doc["widths"],
        doc["activation"],
        doc.get("alpha", 0.01),
        doc.get("output_fn", "none"),
        doc.get("residual", False),
    )
    params = MlpParams([(np.array(l["W"], dtype=np.float64), np.array(l["b"], dtype=np.float64)) for l in doc["layers"]])
    _check_params(cfg, params)
    return cfg, params


def save_checkpoint(path, cfg: MlpConfig, params: MlpParams) -> None:
    """Write a JSON checkpoint. Floats use Python's shortest round-trip repr."""
    with open(path, "w") as fh:
        json.dump(to_jsonable(cfg, params), fh, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> tuple[MlpConfig, MlpParams]:
    with open(path) as fh:
        return from_jsonable(json.load(fh))
