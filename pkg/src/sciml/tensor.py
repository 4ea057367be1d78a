"""Dense float64 arithmetic helpers and a portable counter-based RNG.

Tensors are plain ``numpy.ndarray`` objects with ``dtype=float64`` in C
(row-major) order. The helpers here only add the shape checks the rest of
the package relies on.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "DimensionError",
    "as_tensor",
    "matmul",
    "outer",
    "ewise",
    "Rng",
]


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def outer(u, v) -> np.ndarray:
    u = as_tensor(u).reshape(-1)
    v = as_tensor(v).reshape(-1)
    return u[:, None] * v[None, :]


_UNARY = {
    "neg": np.negative,
    "abs": np.abs,
    "exp": np.exp,
    "log": np.log,
    "tanh": np.tanh,
    "sin": np.sin,
    "cos": np.cos,
    "square": np.square,
    "sqrt": np.sqrt,
    "max0": lambda x: np.maximum(x, 0.0),
}

_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "maximum": np.maximum,
}


def ewise(op, *args, scale: float | None = None) -> np.ndarray:
    """Apply a scalar function pointwise.

    ``op`` is either a callable or one of the names in the unary/binary
    tables (``"add"``, ``"max0"``, ...). ``"scale"`` multiplies a single
    tensor by the scalar ``scale``. Binary operands must have equal shapes;
    a Python scalar is accepted as either operand.
    """
    tensors = [a if np.isscalar(a) else as_tensor(a) for a in args]
    if op == "scale":
        if len(tensors) != 1 or scale is None:
            raise TypeError("scale takes one tensor and the 'scale' keyword")
        return tensors[0] * float(scale)
    shapes = {t.shape for t in tensors if not np.isscalar(t)}
    if len(shapes) > 1:
        raise DimensionError(f"ewise operands have different shapes: {sorted(shapes)}")
    if callable(op):
        return as_tensor(op(*tensors))
    if len(tensors) == 1 and op in _UNARY:
        return as_tensor(_UNARY[op](tensors[0]))
    if len(tensors) == 2 and op in _BINARY:
        return as_tensor(_BINARY[op](tensors[0], tensors[1]))
    raise KeyError(f"unknown pointwise op {op!r} for {len(tensors)} operand(s)")


# SplitMix64 constants.
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Counter-based SplitMix64 stream.

    Draw ``k`` (0-based) of a stream with seed ``s`` is
    ``mix(s + (k + 1) * 0x9E3779B97F4A7C15 mod 2**64)``; the top 53 bits
    give a uniform double in [0, 1). Because the state is just a counter,
    streams are identical on every platform and vectorise trivially.

    Normals use the basic Box-Muller transform on consecutive uniform
    pairs ``(u1, u2)``: ``r = sqrt(-2 log(1 - u1))``, giving
    ``r cos(2 pi u2)`` then ``r sin(2 pi u2)``. An odd request discards the
    sine half of its last pair.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def __repr__(self):
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def _raw(self, n: int) -> np.ndarray:
        k = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + k * _GAMMA
            return _splitmix(z)

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        n = 1 if size is None else int(np.prod(size))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        u = low + (high - low) * u
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def normal(self, size=None, mean: float = 0.0, std: float = 1.0):
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        ang = 2.0 * math.pi * u[:, 1]
        z = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1).reshape(-1)[:n]
        z = mean + std * z
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def integer(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        return min(int(self.uniform() * n), n - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)`` (swaps from the top down)."""
        idx = np.arange(n)
        if n < 2:
            return idx
        u = self.uniform(n - 1)
        for step, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[step] * (i + 1)), i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n): the first k swaps of a bottom-up Fisher-Yates pass."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot choose {k} of {n}")
        u = self.uniform(k) if k else np.zeros(0)
        swapped: dict = {}
        out = np.empty(k, dtype=np.int64)
        for i in range(k):
            j = i + min(int(u[i] * (n - i)), n - i - 1)
            out[i] = swapped.get(j, j)
            swapped[j] = swapped.get(i, i)
        return out

    def spawn(self, key: int) -> "Rng":
        """Independent substream derived from this stream's seed and ``key``."""
        mixed = _splitmix(np.array([(self.seed ^ (int(key) * 0xD1B54A32D192ED03)) & _MASK64], dtype=np.uint64))
        return Rng(int(mixed[0]))


def rng_stream(seed: int) -> Rng:
    return Rng(seed)


def rng_uniform(rng: Rng) -> float:
    return rng.uniform()


def rng_normal(rng: Rng) -> float:
    return rng.normal()
