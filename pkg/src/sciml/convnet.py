"""Discrete convolution, pooling, transpose convolution and a small CNN.

Images are arrays of shape ``(N1, N2, C)`` or batches ``(B, N1, N2, C)``.
Kernels are ``(kh, kw, C, P)``. The convolution is a centred correlation

    out[i, j, p] = sum_{m, n, c} g_p[m, n, c] U[i S + m, j S + n, c] + b_p

with offsets m, n running over -kbar..kbar. With ``padding="same"`` the
image is zero-padded by kbar so that output pixel (i, j) is centred on
input pixel (i S, j S); with ``padding="none"`` only positions where the
kernel fits are kept.

Rows of an image point down and columns along x1, so a field sampled as
``U[i, j] = u(j h, (N - 1 - i) h)`` has x2 increasing upwards.

The forward kernels avoid forcing float64, so they also run on object
arrays (for instance symbolic entries).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import nn
from .optim import OptimizerState, step
from .tensor import Rng

__all__ = [
    "ConvKernelSet",
    "conv2d",
    "conv1d",
    "pool",
    "transpose_conv",
    "transpose_conv1d",
    "contribution_counts",
    "checkerboard_uniform",
    "stencil_kernel",
    "gaussian_kernel",
    "fd_equivalence_check",
    "conv_matrix_1d",
    "transpose_conv_matrix_1d",
    "weight_count",
    "CnnSpec",
    "init_cnn",
    "cnn_forward",
    "cnn_train",
    "squares_dataset",
]


def _arr(x):
    x = np.asarray(x)
    return x if x.dtype == object else x.astype(np.float64, copy=False)


def _pads(padding, kh, kw):
    if padding in ("none", None, 0):
        return 0, 0
    if padding == "same":
        return (kh - 1) // 2, (kw - 1) // 2
    if isinstance(padding, int):
        return padding, padding
    return int(padding[0]), int(padding[1])


def _out_extent(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def _conv_fwd(U, G, stride=1, pad=(0, 0)):
    B, H, W, C = U.shape
    kh, kw, Cg, P = G.shape
    if Cg != C:
        raise ValueError(f"kernel has {Cg} channels, image has {C}")
    ph, pw = pad
    Ho, Wo = _out_extent(H, kh, stride, ph), _out_extent(W, kw, stride, pw)
    if Ho < 1 or Wo < 1:
        raise ValueError(f"kernel {kh}x{kw} larger than padded image {H + 2 * ph}x{W + 2 * pw}")
    Up = np.zeros((B, H + 2 * ph, W + 2 * pw, C), dtype=U.dtype)
    Up[:, ph : ph + H, pw : pw + W] = U
    out = None
    for a in range(kh):
        for b in range(kw):
            sl = Up[:, a : a + stride * (Ho - 1) + 1 : stride, b : b + stride * (Wo - 1) + 1 : stride, :]
            term = np.matmul(sl, G[a, b])
            out = term if out is None else out + term
    return out


def _conv_vjp(g, out, U, G, stride=1, pad=(0, 0)):
    B, H, W, C = U.shape
    kh, kw, _, P = G.shape
    ph, pw = pad
    Ho, Wo = g.shape[1], g.shape[2]
    Up = np.zeros((B, H + 2 * ph, W + 2 * pw, C))
    Up[:, ph : ph + H, pw : pw + W] = U
    dUp = np.zeros_like(Up)
    dG = np.zeros_like(G)
    g2 = g.reshape(-1, P)
    for a in range(kh):
        for b in range(kw):
            idx = (slice(None), slice(a, a + stride * (Ho - 1) + 1, stride), slice(b, b + stride * (Wo - 1) + 1, stride))
            dUp[idx] += g @ G[a, b].T
            dG[a, b] = Up[idx].reshape(-1, C).T @ g2
    return dUp[:, ph : ph + H, pw : pw + W], dG


def _pool_fwd(U, kind="max", patch=2, stride=2):
    B, H, W, C = U.shape
    Ho, Wo = _out_extent(H, patch, stride, 0), _out_extent(W, patch, stride, 0)
    if Ho < 1 or Wo < 1:
        raise ValueError(f"patch {patch} exceeds image {H}x{W}")
    out = None
    for a in range(patch):
        for b in range(patch):
            sl = U[:, a : a + stride * (Ho - 1) + 1 : stride, b : b + stride * (Wo - 1) + 1 : stride, :]
            if out is None:
                out = sl.copy()
            elif kind == "max":
                out = np.maximum(out, sl)
            else:
                out = out + sl
    if kind == "avg":
        out = out / (patch * patch)
    elif kind != "max":
        raise ValueError(f"unknown pooling {kind!r}")
    return out


def _pool_vjp(g, out, U, kind="max", patch=2, stride=2):
    Ho, Wo = g.shape[1], g.shape[2]
    dU = np.zeros_like(U)
    taken = np.zeros(out.shape, dtype=bool)
    for a in range(patch):
        for b in range(patch):
            idx = (slice(None), slice(a, a + stride * (Ho - 1) + 1, stride), slice(b, b + stride * (Wo - 1) + 1, stride))
            if kind == "max":
                hit = (U[idx] == out) & ~taken  # first maximum in scan order gets the gradient
                taken |= hit
                dU[idx] += np.where(hit, g, 0.0)
            else:
                dU[idx] += g / (patch * patch)
    return (dU,)


ad.register("conv2d", _conv_fwd, _conv_vjp, graph_ok=False)
ad.register("pool", _pool_fwd, _pool_vjp, smooth=False)


@dataclass
class ConvKernelSet:
    weights: np.ndarray  # (kh, kw, C, P)
    biases: np.ndarray | None = None  # (P,)
    stride: int = 1
    padding: object = "same"

    def __post_init__(self):
        self.weights = _arr(self.weights)
        if self.weights.ndim != 4:
            raise ValueError("kernel weights must have shape (kh, kw, C, P)")
        if self.biases is None:
            self.biases = np.zeros(self.weights.shape[3])
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


def conv2d(image, kernels: ConvKernelSet, activation: str | None = None):
    """Multi-channel strided convolution plus one bias per output channel."""
    U = image if isinstance(image, ad.Var) else _arr(image)
    single = ad._shape(U).__len__() == 3
    if single:
        U = ad.reshape(U, (1,) + tuple(ad._shape(U))) if isinstance(U, ad.Var) else U[None]
    G = kernels.weights
    kh, kw = G.shape[:2]
    pad = _pads(kernels.padding, kh, kw)
    if isinstance(U, ad.Var) or isinstance(G, ad.Var):
        out = ad.apply("conv2d", U, G, stride=kernels.stride, pad=pad)
    else:
        out = _conv_fwd(U, G, kernels.stride, pad)
    if kernels.biases is not None and np.any(np.asarray(ad._val(kernels.biases)) != 0):
        out = ad.add(out, kernels.biases) if isinstance(out, ad.Var) else out + kernels.biases
    if activation:
        out = nn.activation_apply(activation, out)
    if single:
        out = out[0] if not isinstance(out, ad.Var) else ad.reshape(out, tuple(out.shape[1:]))
    return out


def conv1d(u, kernel, stride: int = 1, pad: int = 0):
    """1D instance of :func:`conv2d` with a centred kernel [g_{-kbar}..g_{kbar}]."""
    u = _arr(u)
    k = _arr(kernel)
    G = k.reshape(1, -1, 1, 1)
    return _conv_fwd(u.reshape(1, 1, -1, 1), G, stride, (0, pad)).reshape(-1)


def pool(image, kind: str = "max", patch: int = 2, stride: int | None = None):
    """Max or average over patch x patch windows per channel; stride defaults to patch."""
    stride = patch if stride is None else stride
    if stride < 1:
        raise ValueError("stride must be >= 1")
    U = image if isinstance(image, ad.Var) else _arr(image)
    single = len(ad._shape(U)) == 3
    if single:
        U = ad.reshape(U, (1,) + tuple(ad._shape(U))) if isinstance(U, ad.Var) else U[None]
    out = ad.apply("pool", U, kind=kind, patch=patch, stride=stride) if isinstance(U, ad.Var) else _pool_fwd(
        U, kind, patch, stride
    )
    if single:
        out = out[0] if not isinstance(out, ad.Var) else ad.reshape(out, tuple(out.shape[1:]))
    return out


def transpose_conv1d(u, kernel, stride: int = 2, crop: bool = True):
    """Outer product u k^T with rows shifted by ``stride`` and summed by column.

    The full output has length (n - 1) S + k; with ``crop`` the trailing
    entries are dropped, leaving n S.
    """
    u = _arr(u).reshape(-1)
    k = _arr(kernel).reshape(-1)
    n, kk = u.size, k.size
    full = np.zeros((n - 1) * stride + kk, dtype=np.result_type(u, k))
    outer = u[:, None] * k[None, :]
    for i in range(n):
        full[i * stride : i * stride + kk] = full[i * stride : i * stride + kk] + outer[i]
    return full[: n * stride] if crop else full


def transpose_conv(image, kernel, stride: int = 2, crop: bool = True):
    """2D transpose convolution: (H, W, C) with (kh, kw, C, P) -> (H S, W S, P) when cropped."""
    U = _arr(image)
    G = _arr(kernel)
    if U.ndim == 2:
        U = U[:, :, None]
    if G.ndim == 2:
        G = G[:, :, None, None]
    H, W, C = U.shape
    kh, kw, _, P = G.shape
    full = np.zeros(((H - 1) * stride + kh, (W - 1) * stride + kw, P), dtype=np.result_type(U, G))
    for a in range(kh):
        for b in range(kw):
            full[a : a + stride * (H - 1) + 1 : stride, b : b + stride * (W - 1) + 1 : stride] += U @ G[a, b]
    if crop:
        full = full[: H * stride, : W * stride]
    return full


def contribution_counts(n: int, k: int, stride: int, crop: bool = True, dims: int = 2) -> np.ndarray:
    """Number of (input pixel, kernel tap) pairs landing on each output pixel."""
    c1 = transpose_conv1d(np.ones(n), np.ones(k), stride, crop)
    if dims == 1:
        return c1
    return np.outer(c1, c1)


def checkerboard_uniform(k: int, stride: int) -> bool:
    """True when the steady-state contribution counts are all equal.

    Border pixels always see fewer inputs, so only output positions
    k - 1 .. (n - 1) S, which every nearby input can reach, are examined;
    n is chosen so that this window covers at least one full stride period.
    """
    n = k + 2 * stride + 2
    c = contribution_counts(n, k, stride, crop=False, dims=2)
    window = c[k - 1 : (n - 1) * stride + 1, k - 1 : (n - 1) * stride + 1]
    return bool(np.all(window == window.flat[0]))


def stencil_kernel(kind: str, h: float = 1.0) -> np.ndarray:
    """3x3 stencils; rows are the vertical (y, downwards) offsets.

    ``ddx``/``ddy`` are scaled by 1/(2h), second differences and the
    Laplacian by 1/h^2. ``laplacian`` carries centre +4, so it applies -Laplace.
    """
    if kind == "smooth":
        return np.array([[0.25, 1.0, 0.25], [1.0, 3.0, 1.0], [0.25, 1.0, 0.25]]) / 8.0
    if h <= 0:
        raise ValueError("h must be positive")
    if kind == "ddx":
        return np.array([[0.0, 0.0, 0.0], [-1.0, 0.0, 1.0], [0.0, 0.0, 0.0]]) / (2 * h)
    if kind == "ddy":
        return np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, -1.0, 0.0]]) / (2 * h)
    if kind == "d2dx2":
        return np.array([[0.0, 0.0, 0.0], [1.0, -2.0, 1.0], [0.0, 0.0, 0.0]]) / h**2
    if kind == "d2dy2":
        return np.array([[0.0, 1.0, 0.0], [0.0, -2.0, 0.0], [0.0, 1.0, 0.0]]) / h**2
    if kind == "laplacian":
        return np.array([[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]]) / h**2
    raise ValueError(f"unknown stencil {kind!r}")


def gaussian_kernel(size: int, sigma: float, h: float = 1.0) -> np.ndarray:
    """exp(-r^2 / 2 sigma^2) sampled on a size x size stencil, renormalised to unit sum."""
    r = (np.arange(size) - (size - 1) / 2) * h
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma**2))
    return g / g.sum()


def sample_field(u, N: int, h: float) -> np.ndarray:
    """U[i, j] = u(x1 = j h, x2 = (N - 1 - i) h)."""
    j = np.arange(N)
    X1, X2 = np.meshgrid(j * h, (N - 1 - j) * h)
    return np.asarray(u(X1, X2), dtype=np.float64) * np.ones((N, N))


def fd_equivalence_check(u, derivative, kind: str, h: float, N: int = 16) -> float:
    """max |conv(U, stencil) - derivative| over interior grid points."""
    U = sample_field(u, N, h)
    K = stencil_kernel(kind, h)
    out = conv2d(U[:, :, None], ConvKernelSet(K[:, :, None, None], padding="none"))[:, :, 0]
    D = sample_field(derivative, N, h)[1:-1, 1:-1]
    return float(np.max(np.abs(out - D)))


def conv_matrix_1d(n: int, kernel, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Explicit matrix of :func:`conv1d` acting on length-n inputs."""
    cols = [conv1d(e, kernel, stride, pad) for e in np.eye(n)]
    return np.array(cols).T


def transpose_conv_matrix_1d(n: int, kernel, stride: int = 2, crop: bool = False) -> np.ndarray:
    cols = [transpose_conv1d(e, kernel, stride, crop) for e in np.eye(n)]
    return np.array(cols).T


def weight_count(k: int, C: int, P: int, bias: bool = True) -> int:
    """Trainable weights of a conv layer: P k^2 C, plus P biases if ``bias``."""
    return P * k * k * C + (P if bias else 0)


# ---------------------------------------------------------------------------
# small CNN classifier


@dataclass
class CnnSpec:
    """Layer list, e.g. ``[("conv", 4, 3), ("act", "relu"), ("pool", "max", 2),
    ("flatten",), ("dense", 2), ("softmax",)]``. Conv entries are
    ``("conv", P, k[, stride])`` with same-padding."""

    input_shape: tuple
    layers: list = field(default_factory=list)


def _shape_flow(spec: CnnSpec):
    shape = tuple(spec.input_shape)
    shapes = []
    for li, layer in enumerate(spec.layers):
        kind = layer[0]
        if kind == "conv":
            if len(shape) != 3:
                raise ValueError(f"layer {li}: conv needs an image input, got shape {shape}")
            P, k = layer[1], layer[2]
            s = layer[3] if len(layer) > 3 else 1
            p = (k - 1) // 2
            shape = (_out_extent(shape[0], k, s, p), _out_extent(shape[1], k, s, p), P)
        elif kind == "pool":
            if len(shape) != 3:
                raise ValueError(f"layer {li}: pool needs an image input, got shape {shape}")
            S = layer[2]
            shape = (_out_extent(shape[0], S, S, 0), _out_extent(shape[1], S, S, 0), shape[2])
            if min(shape) < 1:
                raise ValueError(f"layer {li}: pooling patch exceeds image")
        elif kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif kind == "dense":
            if len(shape) != 1:
                raise ValueError(f"layer {li}: dense layer needs a flattened input, got shape {shape}")
            shape = (layer[1],)
        elif kind in ("act", "softmax"):
            pass
        else:
            raise ValueError(f"layer {li}: unknown layer kind {kind!r}")
        shapes.append(shape)
    if not spec.layers or spec.layers[-1][0] != "softmax":
        raise ValueError("architecture must end with a softmax layer")
    return shapes


def init_cnn(spec: CnnSpec, seed: int = 0) -> list:
    rng = Rng(seed)
    shapes = _shape_flow(spec)
    params = []
    prev = tuple(spec.input_shape)
    for layer, shape in zip(spec.layers, shapes):
        if layer[0] == "conv":
            P, k = layer[1], layer[2]
            C = prev[2]
            r = math.sqrt(6.0 / (k * k * (C + P)))
            params += [rng.uniform((k, k, C, P), -r, r), np.zeros(P)]
        elif layer[0] == "dense":
            hin = prev[0]
            r = math.sqrt(6.0 / (hin + layer[1]))
            params += [rng.uniform((layer[1], hin), -r, r), np.zeros(layer[1])]
        prev = shape
    return params


def cnn_forward(spec: CnnSpec, params: Sequence, images):
    """Class probabilities for a batch ``(B, N1, N2, C)`` or a single image."""
    _shape_flow(spec)
    x = images if isinstance(images, ad.Var) else _arr(images)
    single = len(ad._shape(x)) == 3
    if single:
        x = x[None] if not isinstance(x, ad.Var) else ad.reshape(x, (1,) + x.shape)
    pi = 0
    for layer in spec.layers:
        kind = layer[0]
        if kind == "conv":
            k = layer[2]
            s = layer[3] if len(layer) > 3 else 1
            p = ((k - 1) // 2, (k - 1) // 2)
            x = ad.add(ad.apply("conv2d", x, params[pi], stride=s, pad=p), params[pi + 1])
            pi += 2
        elif kind == "act":
            x = nn.activation_apply(layer[1], x)
        elif kind == "pool":
            x = ad.apply("pool", x, kind=layer[1], patch=layer[2], stride=layer[2])
        elif kind == "flatten":
            shp = ad._shape(x)
            x = ad.reshape(x, (shp[0], int(np.prod(shp[1:]))))
        elif kind == "dense":
            x = ad.add(ad.matmul(x, ad.transpose(params[pi])), params[pi + 1])
            pi += 2
        elif kind == "softmax":
            x = nn.softmax(x)
    if single:
        x = x[0] if not isinstance(x, ad.Var) else ad.reshape(x, (x.shape[1],))
    return x


def squares_dataset(n: int, size: int = 8, seed: int = 0, noise: float = 0.05):
    """Filled (class 0) versus hollow (class 1) squares of random size and position.

    Returns images ``(n, size, size, 1)`` and one-hot labels ``(n, 2)``.
    """
    rng = Rng(seed)
    X = np.zeros((n, size, size, 1))
    Y = np.zeros((n, 2))
    for s in range(n):
        side = 3 + rng.integer(size - 3)
        r0 = rng.integer(size - side + 1)
        c0 = rng.integer(size - side + 1)
        cls = s % 2
        X[s, r0 : r0 + side, c0 : c0 + side, 0] = 1.0
        if cls == 1:
            X[s, r0 + 1 : r0 + side - 1, c0 + 1 : c0 + side - 1, 0] = 0.0
        X[s] += noise * rng.normal((size, size, 1))
        Y[s, cls] = 1.0
    return X, Y


@dataclass
class CnnResult:
    params: list
    history: list
    accuracy: float


def cnn_train(
    spec: CnnSpec,
    X,
    Y,
    epochs: int = 200,
    lr: float = 1e-2,
    seed: int = 0,
    params=None,
) -> CnnResult:
    """Full-batch Adam on the cross-entropy loss; returns training accuracy."""
    params = init_cnn(spec, seed) if params is None else [np.array(p) for p in params]
    sizes = [p.size for p in params]
    shapes = [p.shape for p in params]
    theta = np.concatenate([p.reshape(-1) for p in params])
    state = OptimizerState("adam", lr)
    hist = []

    def unflat(t):
        out, k = [], 0
        for sz, sh in zip(sizes, shapes):
            out.append(t[k : k + sz].reshape(sh))
            k += sz
        return out

    for epoch in range(epochs):
        tape = ad.Tape()
        leaves = [tape.leaf(p) for p in unflat(theta)]
        probs = cnn_forward(spec, leaves, X)
        L = nn.loss("cross_entropy", probs, Y)
        grads = ad.grad(L, leaves)
        hist.append((epoch, float(L.value)))
        theta = step(state, theta, np.concatenate([g.reshape(-1) for g in grads]))
    params = unflat(theta)
    pred = cnn_forward(spec, params, X)
    acc = float(np.mean(np.argmax(pred, axis=1) == np.argmax(Y, axis=1)))
    return CnnResult(params, hist, acc)
