"""Fourier neural operator on uniform periodic grids.

Fields are channels-last arrays of shape (B, N1, N2, H). The network is

    v1 = W1 a + b1                                   (lifting, pointwise)
    v  = sigma(W v + b + K v)                        (middle layers)
    u  = Q v + q                                     (projection, pointwise)

where K is the truncated spectral convolution of :mod:`.fourier`. A 1D
problem uses N2 = 1 with k2 = 0.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from .. import nn
from ..optim import OptimizerState, step
from ..tensor import Rng
from . import fourier
from .deeponet import relative_l2

__all__ = [
    "GridFunction2D",
    "FnoLayer",
    "Fno",
    "default_kmax",
    "init_fno",
    "identity_fno",
    "fno_forward",
    "fno_train",
    "FnoResult",
    "periodic_helmholtz_oracle",
    "random_periodic_fields",
    "fno_to_jsonable",
    "fno_from_jsonable",
]


@dataclass
class GridFunction2D:
    """Samples on the periodic grid x = (m L1 / N1, n L2 / N2)."""

    values: np.ndarray  # (N1, N2) or (N1, N2, H)
    lengths: tuple = (1.0, 1.0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        for N in self.values.shape[:2]:
            if N < 1 or N & (N - 1):
                raise ValueError(f"grid sizes must be powers of two, got {self.values.shape[:2]}")

    @property
    def shape(self):
        return self.values.shape[:2]

    def nodes(self):
        N1, N2 = self.shape
        return np.arange(N1) * self.lengths[0] / N1, np.arange(N2) * self.lengths[1] / N2


def default_kmax(N: int) -> int:
    return min(12, N // 4)


@dataclass
class FnoLayer:
    W: np.ndarray  # (H, H)
    b: np.ndarray  # (H,)
    kappa: np.ndarray  # complex (H, H, 2 k1 + 1, 2 k2 + 1)

    def __post_init__(self):
        if isinstance(self.kappa, np.ndarray):
            self.kappa = np.asarray(self.kappa, dtype=np.complex128)
            if not fourier.is_conjugate_symmetric(self.kappa):
                raise ValueError("spectral weights must satisfy kappa[-m,-n] = conj(kappa[m,n])")
        H = self.W.shape[0]
        if self.W.shape != (H, H) or self.b.shape != (H,) or self.kappa.shape[:2] != (H, H):
            raise ValueError(f"inconsistent layer widths: W{self.W.shape} b{self.b.shape} kappa{self.kappa.shape}")

    @property
    def kmax(self):
        M1, M2 = self.kappa.shape[2:]
        return (M1 - 1) // 2, (M2 - 1) // 2


@dataclass
class Fno:
    lift: tuple  # (W (H, d_a), b (H,))
    layers: list  # FnoLayer
    proj: tuple  # (Q (1, H), q (1,))
    activation: str = "tanh"
    lengths: tuple = (1.0, 1.0)

    @property
    def width(self) -> int:
        return self.lift[0].shape[0]

    def arrays(self) -> list:
        out = [self.lift[0], self.lift[1]]
        for layer in self.layers:
            out += [layer.W, layer.b, layer.kappa.real, layer.kappa.imag]
        return out + [self.proj[0], self.proj[1]]

    def with_arrays(self, arrays, check: bool = True) -> "Fno":
        """Rebuild from :meth:`arrays` order, symmetrising the spectral weights."""
        arrays = list(arrays)
        lift = (arrays[0], arrays[1])
        layers = []
        k = 2
        for _ in self.layers:
            W, b, kr, ki = arrays[k : k + 4]
            kappa = fourier.symmetrize(kr + 1j * ki) if check else kr + 1j * ki
            layers.append(FnoLayer(W, b, kappa))
            k += 4
        return Fno(lift, layers, (arrays[k], arrays[k + 1]), self.activation, self.lengths)


def init_fno(width: int = 16, n_layers: int = 2, kmax=(12, 0), d_in: int = 1, activation: str = "tanh",
             lengths=(1.0, 1.0), seed: int = 0) -> Fno:
    """Glorot pointwise weights; spectral weights uniform in +-1/(H L1 L2), symmetrised."""
    rng = Rng(seed)
    H = width
    k1, k2 = kmax

    def glorot(shape, r):
        lim = math.sqrt(6.0 / (shape[0] + shape[1]))
        return r.uniform(shape, -lim, lim)

    lift = (glorot((H, d_in), rng.spawn(1)), np.zeros(H))
    layers = []
    scale = 1.0 / (H * lengths[0] * lengths[1])
    for l in range(n_layers):
        r = rng.spawn(10 + l)
        kshape = (H, H, 2 * k1 + 1, 2 * k2 + 1)
        K = r.uniform(kshape, -scale, scale) + 1j * r.spawn(1).uniform(kshape, -scale, scale)
        layers.append(FnoLayer(glorot((H, H), r.spawn(2)), np.zeros(H), fourier.symmetrize(K)))
    proj = (glorot((1, H), rng.spawn(2)), np.zeros(1))
    return Fno(lift, layers, proj, activation, tuple(lengths))


def identity_fno(lift, proj, kmax=(12, 0), lengths=(1.0, 1.0)) -> Fno:
    """One middle layer with W = 0, b = 0 and kappa_ij = delta_ij / (L1 L2) on every retained mode.

    With the linear activation the middle layer reproduces any band-limited
    lifted field, so the network reduces to proj(lift(a)).
    """
    H = lift[0].shape[0]
    k1, k2 = kmax
    K = np.zeros((H, H, 2 * k1 + 1, 2 * k2 + 1), dtype=np.complex128)
    K[np.arange(H), np.arange(H)] = 1.0 / (lengths[0] * lengths[1])
    layer = FnoLayer(np.zeros((H, H)), np.zeros(H), K)
    return Fno(lift, [layer], proj, "linear", tuple(lengths))


def _pointwise(v, W, b):
    shape = ad._shape(v)
    flat = ad.reshape(v, (int(np.prod(shape[:-1])), shape[-1]))
    out = ad.add(ad.matmul(flat, ad.transpose(W)), b)
    return ad.reshape(out, tuple(shape[:-1]) + (ad._shape(W)[0],))


def _forward(model: Fno, a, params=None):
    params = model.arrays() if params is None else params
    v = _pointwise(a, params[0], params[1])
    k = 2
    for _ in model.layers:
        W, b, kr, ki = params[k : k + 4]
        conv = ad.apply("spectral_conv", v, kr, ki, lengths=tuple(model.lengths))
        v = nn.activation_apply(model.activation, ad.add(_pointwise(v, W, b), conv))
        k += 4
    u = _pointwise(v, params[k], params[k + 1])
    shape = ad._shape(u)
    return ad.reshape(u, tuple(shape[:-1]))


def _as_fields(a):
    if isinstance(a, GridFunction2D):
        a = a.values
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[None, :, :, None]
    elif a.ndim == 3:
        a = a[..., None]
    return a


def fno_forward(model: Fno, a) -> np.ndarray:
    """Apply the FNO to one field (N1, N2), a batch (B, N1, N2) or channels-last (B, N1, N2, d).

    Returns the scalar output field with the input's leading shape.
    """
    raw = a.values if isinstance(a, GridFunction2D) else np.asarray(a)
    A = _as_fields(a)
    if A.shape[-1] != model.lift[0].shape[1]:
        raise ValueError(f"input has {A.shape[-1]} channels, lifting expects {model.lift[0].shape[1]}")
    for l, layer in enumerate(model.layers, 1):
        k1, k2 = layer.kmax
        for N, kk in zip(A.shape[1:3], (k1, k2)):
            if 2 * kk >= N and not (N == 1 and kk == 0):
                raise ValueError(f"layer {l}: k_max={kk} needs a grid with more than {2 * kk} points, got {N}")
    u = _forward(model, A)
    return u[0] if raw.ndim == 2 else u


@dataclass
class FnoResult:
    model: Fno
    history: list = field(default_factory=list)
    status: str = "ok"
    seconds: float = 0.0


def fno_train(
    model: Fno,
    A,
    U,
    iterations: int = 1000,
    optimizer: OptimizerState | None = None,
    batch_size: int | None = None,
    seed: int = 0,
) -> FnoResult:
    """Adam on the mean squared grid error over pairs (A[i], U[i]).

    The spectral weights are trained unconstrained; the forward pass only
    sees their conjugate-symmetric part (the real part of the inverse
    transform), and the returned model stores that projection.
    """
    A = _as_fields(A)
    U = np.asarray(U, dtype=np.float64)
    if len(A) == 0:
        raise ValueError("empty dataset")
    if U.shape != A.shape[:3]:
        raise ValueError(f"targets {U.shape} do not match inputs {A.shape[:3]}")
    t0 = time.perf_counter()
    optimizer = OptimizerState("adam", 1e-3) if optimizer is None else optimizer
    rng = Rng(seed)
    arrays = [np.array(p, dtype=np.float64) for p in model.arrays()]
    sizes = [p.size for p in arrays]
    shapes = [p.shape for p in arrays]
    theta = np.concatenate([p.reshape(-1) for p in arrays])

    def unflat(t):
        out, k = [], 0
        for sz, sh in zip(sizes, shapes):
            out.append(t[k : k + sz].reshape(sh))
            k += sz
        return out

    res = FnoResult(model)
    n = len(A)
    for it in range(iterations):
        idx = np.arange(n) if batch_size is None else rng.permutation(n)[:batch_size]
        tape = ad.Tape()
        leaves = [tape.leaf(p) for p in unflat(theta)]
        pred = _forward(model, A[idx], leaves)
        L = ad.mean(ad.square(ad.sub(pred, U[idx])))
        lv = float(L.value)
        res.history.append((it, lv))
        if not math.isfinite(lv):
            res.status = "diverged"
            break
        grads = ad.grad(L, leaves)
        theta = step(optimizer, theta, np.concatenate([g.reshape(-1) for g in grads]))
    if res.status == "ok":
        res.model = model.with_arrays(unflat(theta))
    res.seconds = time.perf_counter() - t0
    return res


def periodic_helmholtz_oracle(a, L: float = 1.0) -> np.ndarray:
    """Solve -u'' + u = a on a periodic 1D grid exactly in Fourier space (rows are samples)."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    N = a.shape[-1]
    m = np.fft.fftfreq(N, d=1.0 / N)  # integer mode numbers in storage order
    ah = fourier.fft(a)
    return fourier.ifft(ah / (1.0 + (2 * np.pi * m / L) ** 2)).real


def random_periodic_fields(n: int, N: int, K: int = 8, L: float = 1.0, seed: int = 0, decay: float = 1.0) -> np.ndarray:
    """n band-limited random fields on N periodic nodes, modes up to K with 1/k^decay amplitudes."""
    rng = Rng(seed)
    c = rng.normal((n, K + 1))
    s = rng.normal((n, K + 1))
    k = np.arange(K + 1)
    w = np.ones(K + 1)
    w[1:] = 1.0 / k[1:] ** decay
    x = np.arange(N) * L / N
    ph = 2 * np.pi * np.outer(k, x) / L
    return (c * w) @ np.cos(ph) + (s * w) @ np.sin(ph)


def fno_to_jsonable(model: Fno) -> dict:
    """Checkpoint document; complex spectral weights as separate re/im arrays."""
    return {
        "kind": "fno",
        "activation": model.activation,
        "lengths": list(model.lengths),
        "lift": [model.lift[0].tolist(), model.lift[1].tolist()],
        "layers": [
            {"W": l.W.tolist(), "b": l.b.tolist(), "kappa_re": l.kappa.real.tolist(), "kappa_im": l.kappa.imag.tolist()}
            for l in model.layers
        ],
        "proj": [model.proj[0].tolist(), model.proj[1].tolist()],
    }


def fno_from_jsonable(doc: dict) -> Fno:
    arr = np.asarray
    layers = [
        FnoLayer(arr(l["W"], dtype=float), arr(l["b"], dtype=float), arr(l["kappa_re"]) + 1j * arr(l["kappa_im"]))
        for l in doc["layers"]
    ]
    return Fno(
        (arr(doc["lift"][0], dtype=float), arr(doc["lift"][1], dtype=float)),
        layers,
        (arr(doc["proj"][0], dtype=float), arr(doc["proj"][1], dtype=float)),
        doc["activation"],
        tuple(doc["lengths"]),
    )

