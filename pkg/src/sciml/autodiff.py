"""Reverse-mode automatic differentiation on a recorded tape.

A :class:`Tape` is an append-only list of primitive-op records. Every
record stores the op name, the indices of its parents (always smaller than
its own index), the cached forward value and any static op arguments.

The vector-Jacobian products of the primitives are written with the
polymorphic functions of this module (``add``, ``mul``, ``tanh``, ...).
Called on plain arrays they evaluate with numpy; called with at least one
:class:`Var` they record a new node. This lets the same backward sweep run
in two modes:

* numeric (``create_graph=False``): adjoints are arrays.
* graph (``create_graph=True``): adjoints are recorded on the tape, so the
  result can itself be differentiated. Repeating this gives second and
  higher derivatives of network outputs with respect to inputs.

Primitives whose derivative is not smooth (``relu``, ``leaky_relu``,
``abs``) refuse to take part in graph mode and raise
:class:`SmoothnessError`.

Example
-------
>>> tape = Tape()
>>> x = tape.leaf(3.0)
>>> u = x * x
>>> (du,) = grad(u, [x], create_graph=True)
>>> (d2u,) = grad(du, [x])
>>> float(du.value), float(d2u)
(6.0, 2.0)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tape",
    "Var",
    "SmoothnessError",
    "UnregisteredPrimitiveError",
    "record",
    "backward",
    "grad",
    "extend",
    "input_jacobian",
    "grad_check",
    "GradCheckReport",
    "primitive_names",
]


class SmoothnessError(RuntimeError):
    """Raised when a graph-mode derivative passes through a non-smooth primitive."""


class UnregisteredPrimitiveError(TypeError):
    """Raised when an expression uses an operation the tape cannot record."""


@dataclass
class Node:
    op: str
    parents: tuple
    value: np.ndarray
    ctx: dict = field(default_factory=dict)


class Tape:
    """Append-only computational graph.

    Attributes
    ----------
    nodes : list of Node
    roots : list of int
        Indices of the input (leaf) nodes, in creation order.
    tip : int or None
        Index of the output node.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.roots: list[int] = []
        self.tip: int | None = None

    def __len__(self):
        return len(self.nodes)

    def _push(self, op, parents, value, ctx=None) -> "Var":
        self.nodes.append(Node(op, tuple(parents), value, ctx or {}))
        return Var(self, len(self.nodes) - 1)

    def leaf(self, value) -> "Var":
        """Add an input node; its index is appended to ``roots``."""
        v = self._push("leaf", (), np.array(value, dtype=np.float64))
        self.roots.append(v.idx)
        return v

    def const(self, value) -> "Var":
        return self._push("const", (), np.asarray(value, dtype=np.float64))

    def var(self, idx: int) -> "Var":
        return Var(self, idx)

    @property
    def output(self) -> "Var":
        if self.tip is None:
            raise ValueError("tape has no tip")
        return Var(self, self.tip)

    def copy(self) -> "Tape":
        t = Tape()
        t.nodes = list(self.nodes)
        t.roots = list(self.roots)
        t.tip = self.tip
        return t

    def replay(self, root_values: dict | None = None, upto: int | None = None) -> list:
        """Recompute every node value with some roots replaced.

        ``root_values`` maps root index to a new value. Returns the list of
        recomputed values; the tape itself is not modified.
        """
        root_values = root_values or {}
        upto = self.tip if upto is None else upto
        vals = []
        for k, node in enumerate(self.nodes[: upto + 1]):
            if node.op in ("leaf", "const"):
                vals.append(np.asarray(root_values.get(k, node.value), dtype=np.float64))
            else:
                prim = _PRIMS[node.op]
                args = [vals[p] for p in node.parents]
                vals.append(prim.forward(*args, **node.ctx))
        return vals


class Var:
    """Handle on a tape node with arithmetic operator overloading."""

    __slots__ = ("tape", "idx")
    __array_ufunc__ = None  # keep numpy from silently consuming Vars

    def __init__(self, tape: Tape, idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.idx].value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Var(idx={self.idx}, op={self.tape.nodes[self.idx].op}, shape={self.shape})"

    def __len__(self):
        return self.shape[0]

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


# ---------------------------------------------------------------------------
# primitive registry


@dataclass
class Primitive:
    name: str
    forward: Callable
    vjp: Callable | None
    smooth: bool = True
    graph_ok: bool = True  # False: graph-mode VJP not available (numeric only)


_PRIMS: dict[str, Primitive] = {}


def register(name, forward, vjp, smooth=True, graph_ok=True):
    """Register a primitive. Other modules use this for their own kernels."""
    _PRIMS[name] = Primitive(name, forward, vjp, smooth, graph_ok)


def primitive_names() -> list[str]:
    return sorted(_PRIMS)


def _find_tape(args):
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ValueError("operands belong to different tapes")
    return tape


def apply(name: str, *args, **ctx):
    """Evaluate primitive ``name``; records a node if any argument is a Var."""
    try:
        prim = _PRIMS[name]
    except KeyError:
        raise UnregisteredPrimitiveError(f"unregistered primitive {name!r}") from None
    tape = _find_tape(args)
    if tape is None:
        return prim.forward(*[np.asarray(a, dtype=np.float64) for a in args], **ctx)
    parents = []
    vals = []
    for a in args:
        if not isinstance(a, Var):
            a = tape.const(a)
        parents.append(a.idx)
        vals.append(a.value)
    return tape._push(name, parents, prim.forward(*vals, **ctx), ctx)


def _val(a):
    return a.value if isinstance(a, Var) else np.asarray(a, dtype=np.float64)


def _shape(a):
    return np.shape(a.value) if isinstance(a, Var) else np.shape(a)


# ---------------------------------------------------------------------------
# polymorphic operations


def add(a, b):
    return apply("add", a, b)


def sub(a, b):
    return apply("sub", a, b)


def mul(a, b):
    return apply("mul", a, b)


def div(a, b):
    return apply("div", a, b)


def neg(a):
    return apply("neg", a)


def matmul(a, b):
    return apply("matmul", a, b)


def transpose(a):
    return apply("transpose", a)


def reshape(a, shape):
    shape = tuple(int(s) for s in np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
    if tuple(_shape(a)) == tuple(shape):
        return a
    return apply("reshape", a, shape=tuple(shape))


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    if isinstance(axis, list):
        axis = tuple(axis)
    return apply("sum", a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    shape = _shape(a)
    if axis is None:
        n = int(np.prod(shape))
    else:
        axes = (axis,) if np.isscalar(axis) else axis
        n = int(np.prod([shape[ax] for ax in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def sum_to(a, shape):
    """Sum ``a`` down to ``shape`` (reverse of broadcasting)."""
    shape = tuple(shape)
    if tuple(_shape(a)) == shape:
        return a
    return apply("sum_to", a, shape=shape)


def broadcast_to(a, shape):
    shape = tuple(shape)
    if tuple(_shape(a)) == shape:
        return a
    return apply("broadcast_to", a, shape=shape)


def exp(a):
    return apply("exp", a)


def log(a):
    return apply("log", a)


def tanh(a):
    return apply("tanh", a)


def sin(a):
    return apply("sin", a)


def cos(a):
    return apply("cos", a)


def logistic(a):
    return apply("logistic", a)


def sqrt(a):
    return apply("sqrt", a)


def square(a):
    return apply("square", a)


def power(a, p: float):
    return apply("power", a, p=float(p))


def getitem(a, idx):
    return apply("getitem", a, idx=idx)


def scatter(a, idx, shape):
    """Zeros of ``shape`` with ``a`` added at ``idx`` (adjoint of getitem)."""
    return apply("scatter", a, idx=idx, shape=tuple(shape))


def concat(arrays: Sequence, axis: int = 0):
    return apply("concat", *arrays, axis=axis)


def stack(arrays: Sequence, axis: int = 0):
    parts = []
    for a in arrays:
        s = list(_shape(a))
        ax = axis if axis >= 0 else len(s) + 1 + axis
        s.insert(ax, 1)
        parts.append(reshape(a, tuple(s)))
    return concat(parts, axis=axis)


def stop_gradient(a):
    return apply("stop_gradient", a)


def relu(a):
    return apply("relu", a)


def leaky_relu(a, alpha: float = 0.01):
    return apply("leaky_relu", a, alpha=float(alpha))


def absolute(a):
    return apply("abs", a)


def clip_min(a, lo: float):
    return apply("clip_min", a, lo=float(lo))


def norm2(a, axis=None, keepdims=False):
    return sqrt(sum(square(a), axis=axis, keepdims=keepdims))


# ---------------------------------------------------------------------------
# forward kernels and vector-Jacobian products


def _sum_to_np(x, shape):
    lead = x.ndim - len(shape)
    if lead > 0:
        x = x.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and x.shape[i] != 1)
    if axes:
        x = x.sum(axis=axes, keepdims=True)
    return x.reshape(shape)


def _vjp_add(g, out, a, b):
    return sum_to(g, _shape(a)), sum_to(g, _shape(b))


def _vjp_sub(g, out, a, b):
    return sum_to(g, _shape(a)), sum_to(neg(g), _shape(b))


def _vjp_mul(g, out, a, b):
    return sum_to(mul(g, b), _shape(a)), sum_to(mul(g, a), _shape(b))


def _vjp_div(g, out, a, b):
    ga = div(g, b)
    return sum_to(ga, _shape(a)), sum_to(neg(mul(ga, out)), _shape(b))


def _vjp_matmul(g, out, a, b):
    return matmul(g, transpose(b)), matmul(transpose(a), g)


def _matmul_fwd(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def _sum_fwd(a, axis=None, keepdims=False):
    return np.asarray(np.sum(a, axis=axis, keepdims=keepdims), dtype=np.float64)


def _vjp_sum(g, out, a, axis=None, keepdims=False):
    shape = _shape(a)
    if axis is None:
        kshape = (1,) * len(shape)
    else:
        axes = (axis,) if np.isscalar(axis) else axis
        axes = [ax % len(shape) for ax in axes]
        kshape = tuple(1 if i in axes else s for i, s in enumerate(shape))
    return (broadcast_to(reshape(g, kshape), shape),)


def _getitem_fwd(a, idx):
    return np.array(a[idx], dtype=np.float64)


def _scatter_fwd(a, idx, shape):
    out = np.zeros(shape)
    np.add.at(out, idx, a)
    return out


def _concat_fwd(*arrays, axis=0):
    return np.concatenate(arrays, axis=axis)


def _vjp_concat(g, out, *arrays, axis=0):
    grads = []
    start = 0
    nd = len(_shape(arrays[0]))
    ax = axis % nd
    for a in arrays:
        n = _shape(a)[ax]
        sl = [slice(None)] * nd
        sl[ax] = slice(start, start + n)
        grads.append(getitem(g, tuple(sl)))
        start += n
    return tuple(grads)


def _logistic_fwd(a):
    # stable on both tails
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _relu_vjp(g, out, a):
    return (mul(g, (_val(a) > 0).astype(np.float64)),)


def _leaky_vjp(g, out, a, alpha=0.01):
    return (mul(g, np.where(_val(a) > 0, 1.0, alpha)),)


register("add", np.add, _vjp_add)
register("sub", np.subtract, _vjp_sub)
register("mul", np.multiply, _vjp_mul)
register("div", np.divide, _vjp_div)
register("neg", np.negative, lambda g, out, a: (neg(g),))
register("matmul", _matmul_fwd, _vjp_matmul)
register("transpose", lambda a: np.ascontiguousarray(a.T), lambda g, out, a: (transpose(g),))
register("reshape", lambda a, shape: a.reshape(shape), lambda g, out, a, shape: (reshape(g, _shape(a)),))
register("sum", _sum_fwd, _vjp_sum)
register("sum_to", _sum_to_np, lambda g, out, a, shape: (broadcast_to(g, _shape(a)),))
register(
    "broadcast_to",
    lambda a, shape: np.array(np.broadcast_to(a, shape)),
    lambda g, out, a, shape: (sum_to(g, _shape(a)),),
)
register("exp", np.exp, lambda g, out, a: (mul(g, out),))
register("log", np.log, lambda g, out, a: (div(g, a),))
register("tanh", np.tanh, lambda g, out, a: (mul(g, sub(1.0, square(out))),))
register("sin", np.sin, lambda g, out, a: (mul(g, cos(a)),))
register("cos", np.cos, lambda g, out, a: (neg(mul(g, sin(a))),))
register("logistic", _logistic_fwd, lambda g, out, a: (mul(g, mul(out, sub(1.0, out))),))
register("sqrt", np.sqrt, lambda g, out, a: (div(mul(g, 0.5), out),))
register("square", np.square, lambda g, out, a: (mul(g, mul(a, 2.0)),))
register(
    "power",
    lambda a, p: np.power(a, p),
    lambda g, out, a, p: (mul(g, mul(power(a, p - 1.0), p)),),
)
register("getitem", _getitem_fwd, lambda g, out, a, idx: (scatter(g, idx, _shape(a)),))
register("scatter", _scatter_fwd, lambda g, out, a, idx, shape: (getitem(g, idx),))
register("concat", _concat_fwd, _vjp_concat)
register("stop_gradient", lambda a: a.copy(), lambda g, out, a: (None,))
# ReLU derivative at exactly zero is taken as zero.
register("relu", lambda a: np.maximum(a, 0.0), _relu_vjp, smooth=False)
register("leaky_relu", lambda a, alpha=0.01: np.where(a > 0, a, alpha * a), _leaky_vjp, smooth=False)
register("clip_min", lambda a, lo: np.maximum(a, lo), lambda g, out, a, lo: (mul(g, (_val(a) > lo).astype(np.float64)),), smooth=False)
register("abs", np.abs, lambda g, out, a: (mul(g, np.sign(_val(a))),), smooth=False)


# ---------------------------------------------------------------------------
# reverse sweep


def _backprop(tape: Tape, tip: int, seed, wrt: Sequence[int] | None, create_graph: bool) -> dict:
    nodes = tape.nodes
    if wrt is None:
        dep = None
        lo = 0
    else:
        lo = min(wrt) if wrt else tip + 1
        dep = np.zeros(tip + 1, dtype=bool)
        for w in wrt:
            if w <= tip:
                dep[w] = True
        for k in range(lo, tip + 1):
            if not dep[k]:
                ps = nodes[k].parents
                for p in ps:
                    if dep[p]:
                        dep[k] = True
                        break

    adj: dict = {tip: seed}
    for k in range(tip, lo - 1, -1):
        g = adj.get(k)
        if g is None:
            continue
        node = nodes[k]
        if not node.parents:
            continue
        if dep is not None and not dep[k]:
            continue
        prim = _PRIMS[node.op]
        if create_graph:
            if not prim.smooth:
                raise SmoothnessError(
                    f"insufficient smoothness: primitive {node.op!r} has no usable higher derivative; "
                    "use a smooth activation (tanh, logistic, sine, linear)"
                )
            if not prim.graph_ok:
                raise SmoothnessError(f"primitive {node.op!r} supports first derivatives only")
            parents = [Var(tape, p) for p in node.parents]
            out = Var(tape, k)
        else:
            parents = [nodes[p].value for p in node.parents]
            out = node.value
        grads = prim.vjp(g, out, *parents, **node.ctx)
        for p, gp in zip(node.parents, grads):
            if gp is None:
                continue
            if dep is not None and not dep[p]:
                continue
            if p in adj:
                adj[p] = add(adj[p], gp)
            else:
                adj[p] = gp
    return adj


def grad(out: Var, wrt: Sequence[Var], seed=None, create_graph: bool = False) -> list:
    """Gradients of ``out`` with respect to each of ``wrt``.

    ``out`` need not be scalar; ``seed`` defaults to ones shaped like it,
    which gives the gradient of ``sum(out)``. With ``create_graph=True``
    the returned adjoints are Vars recorded on the same tape.
    """
    if not isinstance(out, Var):
        return [np.zeros(_shape(w)) for w in wrt]
    tape = out.tape
    for w in wrt:
        if w.tape is not tape:
            raise ValueError("wrt variable belongs to a different tape")
    if seed is None:
        seed = np.ones(out.shape)
    else:
        if tuple(_shape(seed)) != tuple(out.shape):
            raise ValueError(f"seed shape {_shape(seed)} does not match tip shape {out.shape}")
    if create_graph and not isinstance(seed, Var):
        seed = tape.const(seed)
    if not create_graph:
        seed = _val(seed)
    adj = _backprop(tape, out.idx, seed, [w.idx for w in wrt], create_graph)
    res = []
    for w in wrt:
        g = adj.get(w.idx)
        if g is None:
            g = tape.const(np.zeros(w.shape)) if create_graph else np.zeros(w.shape)
        res.append(g)
    return res


def record(builder: Callable, *inputs) -> Tape:
    """Record ``builder(*leaves)`` on a new tape and return the tape.

    Each input becomes a root leaf. Operations outside the registered
    primitives (for instance a numpy ufunc applied to a Var) raise
    :class:`UnregisteredPrimitiveError`.
    """
    tape = Tape()
    leaves = [tape.leaf(x) for x in inputs]
    try:
        out = builder(*leaves)
    except TypeError as exc:
        if "Var" in str(exc) or "unsupported operand" in str(exc):
            raise UnregisteredPrimitiveError(f"expression uses an unregistered operation: {exc}") from exc
        raise
    if not isinstance(out, Var):
        out = tape.const(out)
    tape.tip = out.idx
    return tape


def backward(tape: Tape, seed=None) -> dict:
    """Full reverse sweep from the tip; returns node index -> adjoint array."""
    tip = tape.output
    if seed is None:
        seed = np.ones(tip.shape)
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != tip.shape:
        raise ValueError(f"seed shape {seed.shape} does not match tip shape {tip.shape}")
    return _backprop(tape, tape.tip, seed, None, False)


def extend(tape: Tape, wrt: int | None = None) -> Tape:
    """New tape whose tip is the recorded derivative of the old tip.

    The derivative is taken with respect to root ``wrt`` (default: the
    first root). For a batched tip the derivative of the sum is returned,
    which equals the per-sample derivative when samples do not interact.
    Applying ``extend`` again yields second derivatives.
    """
    new = tape.copy()
    x = Var(new, new.roots[0] if wrt is None else wrt)
    (d,) = grad(Var(new, new.tip), [x], create_graph=True)
    new.tip = d.idx
    return new


def input_jacobian(tape: Tape, wrt: int | None = None, batched: bool = False) -> np.ndarray:
    """Jacobian of the tip with respect to one root.

    Unbatched: tip of shape ``(m,)`` (or scalar) and root of shape ``(d,)``
    give an ``(m, d)`` matrix. Batched: tip ``(B, m)`` and root ``(B, d)``
    with rows independent give ``(B, m, d)``.
    """
    tip = tape.output
    x = Var(tape, tape.roots[0] if wrt is None else wrt)
    if batched:
        B, m = tip.shape
        jac = np.empty((B, m, x.shape[1]))
        for i in range(m):
            seed = np.zeros(tip.shape)
            seed[:, i] = 1.0
            jac[:, i, :] = _backprop(tape, tape.tip, seed, [x.idx], False).get(x.idx, np.zeros(x.shape))
        return jac
    tshape = tip.shape
    m = int(np.prod(tshape)) if tshape else 1
    jac = np.empty((m, x.size))
    for i in range(m):
        seed = np.zeros(m)
        seed[i] = 1.0
        g = _backprop(tape, tape.tip, seed.reshape(tshape), [x.idx], False).get(x.idx, np.zeros(x.shape))
        jac[i] = np.asarray(g).reshape(-1)
    return jac


@dataclass
class GradCheckReport:
    """Per-root comparison of reverse-mode and central-difference gradients."""

    entries: list = field(default_factory=list)  # (root index, rel error, abs error)

    @property
    def max_rel_error(self) -> float:
        return max((e[1] for e in self.entries), default=0.0)

    @property
    def max_abs_error(self) -> float:
        return max((e[2] for e in self.entries), default=0.0)

    def __len__(self):
        return len(self.entries)


def _rel(a, b):
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0))
    err = np.max(np.abs(a - b), initial=0.0)
    return 0.0 if scale == 0.0 else err / scale, err


def grad_check(tape: Tape, step: float = 1e-6, roots: Sequence[int] | None = None) -> GradCheckReport:
    """Compare backward() with central differences for every root entry.

    The relative error of a root is ``max|g - fd| / max(|g|, |fd|)`` over
    its entries (zero when both vanish). A non-scalar tip is summed.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    roots = list(tape.roots if roots is None else roots)
    report = GradCheckReport()
    if not roots:
        return report
    tip = tape.output
    adj = _backprop(tape, tape.tip, np.ones(tip.shape), roots, False)
    for r in roots:
        base = tape.nodes[r].value
        g = np.asarray(adj.get(r, np.zeros(base.shape)))
        fd = np.empty(base.size)
        flat = base.reshape(-1)
        for i in range(base.size):
            xp = flat.copy()
            xp[i] += step
            xm = flat.copy()
            xm[i] -= step
            fp = np.sum(tape.replay({r: xp.reshape(base.shape)})[-1])
            fm = np.sum(tape.replay({r: xm.reshape(base.shape)})[-1])
            fd[i] = (fp - fm) / (2.0 * step)
        rel, ab = _rel(g.reshape(-1), fd)
        report.entries.append((r, rel, ab))
    return report
