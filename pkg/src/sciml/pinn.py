"""Physics-informed networks: residual losses built on input derivatives.

Input derivatives of the network come from graph-mode reverse sweeps
(:func:`sciml.autodiff.grad` with ``create_graph=True``). Samples in a
batch do not interact, so the gradient of ``sum(u)`` with respect to the
input batch holds every per-sample derivative at once.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import nn
from .optim import OptimizerState, step
from .pdesolve import AdvDiffProblem, exact_adv_diff
from .tensor import Rng

__all__ = [
    "PinnProblem",
    "Derivatives",
    "uniform_points",
    "advdiff_problem",
    "pinn_loss",
    "pinn_residual",
    "train_pinn",
    "PinnResult",
    "error_bound_report",
    "poisson_source",
    "pinn_param_loss",
    "poisson_fd_oracle",
    "AssimilationProblem",
    "assimilation_loss",
]


class Derivatives:
    """Partial derivatives of tape quantities with respect to the input batch."""

    def __init__(self, x: ad.Var):
        self.x = x
        self._cache: dict = {}

    def __call__(self, f: ad.Var, axis: int = 0) -> ad.Var:
        key = (f.idx, axis)
        if key not in self._cache:
            (g,) = ad.grad(ad.sum(f), [self.x], create_graph=True)
            self._cache[key] = g
        g = self._cache[key]
        return ad.getitem(g, (slice(None), slice(axis, axis + 1)))


@dataclass
class PinnProblem:
    """Collocation data and residual operator of a PINN.

    ``residual(x, u, D)`` returns the interior residual as a tape variable,
    where ``x`` is the (N, d) point array, ``u`` the (N, 1) network output
    and ``D(f, j)`` the partial derivative of ``f`` along input ``j``.
    ``boundary_reduction`` is ``"sum"`` (1D endpoint form) or ``"mean"``.
    """

    interior: np.ndarray
    boundary: np.ndarray
    boundary_values: np.ndarray
    residual: Callable
    lam_b: float = 10.0
    boundary_reduction: str = "sum"
    measure: float = 1.0
    boundary_measure: float = 1.0
    exact: Callable | None = None

    def __post_init__(self):
        self.interior = np.atleast_2d(np.asarray(self.interior, dtype=np.float64))
        self.boundary = np.atleast_2d(np.asarray(self.boundary, dtype=np.float64))
        self.boundary_values = np.asarray(self.boundary_values, dtype=np.float64).reshape(-1)
        if self.interior.shape[0] < 1:
            raise ValueError("need at least one interior point")
        if self.lam_b < 0:
            raise ValueError("lam_b must be non-negative")

    def with_interior(self, pts) -> "PinnProblem":
        import dataclasses

        return dataclasses.replace(self, interior=pts)


def uniform_points(n: int, ell: float = 1.0) -> np.ndarray:
    """Cell midpoints (i - 1/2) l / n, i = 1..n, as an (n, 1) array."""
    return (ell * (np.arange(n) + 0.5) / n).reshape(-1, 1)


def advdiff_problem(p: AdvDiffProblem, n_interior: int = 64, lam_b: float = 10.0) -> PinnProblem:
    a, k = p.a, p.kappa

    def residual(x, u, D):
        du = D(u, 0)
        r = ad.sub(ad.mul(du, a), ad.mul(D(du, 0), k))
        if p.f is not None:
            r = ad.sub(r, p.source(x[:, 0]).reshape(-1, 1))
        return r

    exact = (lambda x: exact_adv_diff(p, x)) if p.f is None else None
    return PinnProblem(
        uniform_points(n_interior, p.ell),
        np.array([[0.0], [p.ell]]),
        np.array([p.g0, p.g1]),
        residual,
        lam_b,
        "sum",
        measure=p.ell,
        boundary_measure=1.0,
        exact=exact,
    )


def _terms(problem: PinnProblem, cfg: nn.MlpConfig, params: nn.MlpParams, tape: ad.Tape):
    if cfg.activation not in nn.SMOOTH_ACTIVATIONS:
        raise ad.SmoothnessError(
            f"insufficient smoothness: activation {cfg.activation!r} cannot be differentiated twice"
        )
    ni = problem.interior.shape[0]
    pts = np.vstack([problem.interior, problem.boundary])
    x = tape.leaf(pts)
    u = nn.forward(cfg, params, x)
    D = Derivatives(x)
    r_all = problem.residual(pts, u, D)
    r = ad.getitem(r_all, slice(0, ni))
    p_int = ad.mean(ad.square(r))
    ub = ad.reshape(ad.getitem(u, slice(ni, None)), (problem.boundary.shape[0],))
    sq = ad.square(ad.sub(ub, problem.boundary_values))
    p_b = ad.sum(sq) if problem.boundary_reduction == "sum" else ad.mean(sq)
    return p_int, p_b, r


def pinn_loss(problem: PinnProblem, cfg: nn.MlpConfig, params: nn.MlpParams, tape: ad.Tape | None = None):
    """Pi = Pi_int + lam_b Pi_b; returns (Pi, Pi_int, Pi_b).

    ``params`` may hold arrays or tape variables (then pass their tape).
    """
    tape = ad.Tape() if tape is None else tape
    p_int, p_b, _ = _terms(problem, cfg, params, tape)
    total = ad.add(p_int, ad.mul(p_b, problem.lam_b)) if problem.lam_b else p_int
    return total, p_int, p_b


def pinn_residual(problem: PinnProblem, cfg: nn.MlpConfig, params: nn.MlpParams, x) -> np.ndarray:
    """Interior residual values at the points ``x``."""
    sub = problem.with_interior(np.atleast_2d(np.asarray(x, dtype=np.float64)).reshape(len(x), -1))
    _, _, r = _terms(sub, cfg, params, ad.Tape())
    return r.value.reshape(-1)


def loss_and_grad(problem, cfg, params: nn.MlpParams):
    tape = ad.Tape()
    pv, leaves = params.on_tape(tape)
    total, p_int, p_b = pinn_loss(problem, cfg, pv, tape)
    grads = ad.grad(total, leaves)
    return float(total.value), float(p_int.value), float(p_b.value), grads


@dataclass
class PinnResult:
    cfg: nn.MlpConfig
    params: nn.MlpParams
    history: list = field(default_factory=list)  # (iteration, loss, pi_int, pi_b)
    rel_l2_error: float | None = None
    status: str = "ok"
    seconds: float = 0.0

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return nn.forward(self.cfg, self.params, x.reshape(len(x), -1)).reshape(-1)


def train_pinn(
    problem: PinnProblem,
    cfg: nn.MlpConfig,
    optimizer: OptimizerState | None = None,
    iterations: int = 5000,
    seed: int = 0,
    params: nn.MlpParams | None = None,
    eval_points=None,
) -> PinnResult:
    """Full-batch training; reports the relative L2 error against ``problem.exact``.

    The error is measured on ``eval_points`` (default 1001 uniform points
    of [0, l] in 1D).
    """
    t0 = time.perf_counter()
    optimizer = OptimizerState("adam", 1e-3) if optimizer is None else optimizer
    params = nn.init_params(cfg, Rng(seed)) if params is None else params.copy()
    widths = cfg.widths
    theta = params.flat()
    res = PinnResult(cfg, params)
    for it in range(iterations):
        params = nn.MlpParams.from_flat(widths, theta)
        total, pi, pb, grads = loss_and_grad(problem, cfg, params)
        res.history.append((it, total, pi, pb))
        if not math.isfinite(total):
            res.status = "diverged"
            break
        g = np.concatenate([np.asarray(gr).reshape(-1) for gr in grads])
        theta = step(optimizer, theta, g)
    res.params = nn.MlpParams.from_flat(widths, theta)
    if problem.exact is not None and res.status == "ok":
        if eval_points is None:
            ell = float(problem.boundary.max())
            eval_points = np.linspace(0.0, ell, 1001)
        xe = np.asarray(eval_points, dtype=np.float64)
        ue = problem.exact(xe)
        up = res.predict(xe)
        res.rel_l2_error = float(np.linalg.norm(up - ue) / np.linalg.norm(ue))
    res.seconds = time.perf_counter() - t0
    return res


def error_bound_report(problem: PinnProblem, cfg, params, sizes=(16, 64, 256), fine: int = 256) -> dict:
    """Collocation estimates m Pi^(1/2) next to a fine-quadrature residual norm.

    1D problems on (0, l). The fine norm uses Gauss-Legendre quadrature
    with ``fine`` nodes; the collocation estimate for each size uses the
    uniform midpoint points. ``gap`` is their absolute difference.
    """
    ell = problem.measure
    nodes, weights = np.polynomial.legendre.leggauss(fine)
    xq = (ell * (nodes + 1.0) / 2.0).reshape(-1, 1)
    rq = pinn_residual(problem, cfg, params, xq)
    fine_norm = math.sqrt(float(np.sum(weights * ell / 2.0 * rq**2)))
    _, _, pb = pinn_loss(problem, cfg, params)
    rows = []
    for n in sizes:
        r = pinn_residual(problem, cfg, params, uniform_points(n, ell))
        p_int = float(np.mean(r**2))
        est = problem.measure * math.sqrt(p_int)
        rows.append({"n_v": int(n), "pi_int": p_int, "estimate": est, "gap": abs(fine_norm - est)})
    return {
        "residual_l2": fine_norm,
        "pi_b": float(ad._val(pb)),
        "boundary_estimate": problem.boundary_measure * math.sqrt(float(ad._val(pb))),
        "rows": rows,
    }


def poisson_source(x1, x2, alpha):
    """f(x1, x2; alpha) = 4 alpha x1 (1 - x1) x2 (1 - x2)."""
    return 4.0 * alpha * x1 * (1.0 - x1) * x2 * (1.0 - x2)


def _poisson_residual(x, u, D):
    # div(grad u) - f with kappa = 1; third input column is alpha
    lap = ad.add(D(D(u, 0), 0), D(D(u, 1), 1))
    f = poisson_source(x[:, 0], x[:, 1], x[:, 2]).reshape(-1, 1)
    return ad.sub(lap, f)


def square_boundary(n_side: int) -> np.ndarray:
    """n_side points per edge of the unit square (corners counted once per edge)."""
    t = (np.arange(n_side) + 0.5) / n_side
    z, o = np.zeros(n_side), np.ones(n_side)
    return np.vstack([np.c_[t, z], np.c_[t, o], np.c_[z, t], np.c_[o, t]])


def pinn_param_loss(cfg, params, alphas, interior, boundary, lam_b: float = 10.0, tape=None):
    """Mean over alpha_j of [mean interior residual^2 + lam_b mean boundary u^2].

    The network takes (x1, x2, alpha); the boundary data is g = 0.
    """
    alphas = np.asarray(alphas, dtype=np.float64).reshape(-1)
    if alphas.size == 0:
        raise ValueError("empty alpha set")
    interior = np.asarray(interior, dtype=np.float64)
    boundary = np.asarray(boundary, dtype=np.float64)
    tape = ad.Tape() if tape is None else tape
    pts_i = np.vstack([np.c_[interior, np.full(len(interior), a)] for a in alphas])
    pts_b = np.vstack([np.c_[boundary, np.full(len(boundary), a)] for a in alphas])
    prob = PinnProblem(pts_i, pts_b, np.zeros(len(pts_b)), _poisson_residual, lam_b, "mean")
    # every alpha block has the same sizes, so the pooled means equal the mean of per-alpha means
    return pinn_loss(prob, cfg, params, tape)


def poisson_fd_oracle(alpha: float, n: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Five-point solve of div(grad u) = f(.; alpha) with u = 0 on the unit square.

    Returns the interior grid coordinates (n - 1 per axis) and the values.
    """
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    h = 1.0 / n
    t = h * np.arange(1, n)
    m = n - 1
    T = sp.diags([np.ones(m - 1), -2.0 * np.ones(m), np.ones(m - 1)], [-1, 0, 1]) / h**2
    I = sp.identity(m)
    A = (sp.kron(I, T) + sp.kron(T, I)).tocsc()
    X1, X2 = np.meshgrid(t, t, indexing="ij")
    u = spla.spsolve(A, poisson_source(X1, X2, alpha).reshape(-1))
    return t, u.reshape(m, m)


@dataclass
class AssimilationProblem:
    x_data: np.ndarray
    u_data: np.ndarray
    pde: PinnProblem
    lam_i: float = 1.0
    lam: float = 0.0

    def __post_init__(self):
        self.x_data = np.asarray(self.x_data, dtype=np.float64).reshape(len(self.x_data), -1)
        self.u_data = np.asarray(self.u_data, dtype=np.float64).reshape(-1)
        if len(self.u_data) < 1:
            raise ValueError("need at least one measurement")


def assimilation_loss(problem: AssimilationProblem, cfg, params, tape=None):
    """(lam_i/M) sum (u_i - F(x_i))^2 + mean R^2 + lam ||theta||^2."""
    tape = ad.Tape() if tape is None else tape
    p = problem.pde
    prob = PinnProblem(p.interior, problem.x_data, problem.u_data, p.residual, 1.0, "sum")
    p_int, p_data, _ = _terms(prob, cfg, params, tape)
    total = ad.add(ad.mul(p_data, problem.lam_i / len(problem.u_data)), p_int)
    if problem.lam:
        sq = [ad.sum(ad.square(a)) for a in params.arrays()]
        reg = sq[0]
        for s in sq[1:]:
            reg = ad.add(reg, s)
        total = ad.add(total, ad.mul(reg, problem.lam))
    return total
