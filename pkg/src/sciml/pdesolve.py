"""Classical solvers for the steady 1D advection-diffusion problem.

    a u'(x) - kappa u''(x) = f(x)  on (0, l),   u(0) = g0,  u(l) = g1

Provides the closed-form solution for ``f = 0``, a central finite-difference
discretisation solved with the Thomas algorithm, Chebyshev collocation and
its least-squares variant.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad

__all__ = [
    "AdvDiffProblem",
    "GridFunction",
    "TridiagonalSystem",
    "SingularSystemError",
    "exact_adv_diff",
    "assemble_fd",
    "thomas_solve",
    "solve_fd",
    "convergence_order",
    "chebyshev_eval",
    "collocation_points",
    "SpectralSolution",
    "solve_spectral",
    "spectral_lsq_loss",
    "spectral_lsq_fit",
]


class SingularSystemError(ArithmeticError):
    pass


@dataclass
class AdvDiffProblem:
    a: float = 1.0
    kappa: float = 1.0
    ell: float = 1.0
    f: Callable | None = None
    g0: float = 0.0
    g1: float = 1.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.ell > 0:
            raise ValueError("domain length must be positive")

    @property
    def peclet(self) -> float:
        return self.a * self.ell / self.kappa

    def source(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.f is None:
            return np.zeros_like(x)
        return np.asarray(self.f(x), dtype=np.float64) * np.ones_like(x)


@dataclass
class GridFunction:
    """Samples ``u`` at nodes ``x`` of a uniform grid."""

    x: np.ndarray
    u: np.ndarray
    periodic: bool = False

    def to_csv(self, path, extra: dict | None = None) -> None:
        cols = {"x": self.x, "u": self.u, **(extra or {})}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(cols))
            for row in zip(*cols.values()):
                w.writerow([repr(float(v)) for v in row])


def exact_adv_diff(problem: AdvDiffProblem, x) -> np.ndarray:
    """Closed-form solution for f = 0.

    Written as expm1 ratios; for a > 0 the ratio is rearranged as
    exp(a (x - l)/kappa) (1 - e^{-a x/kappa}) / (1 - e^{-a l/kappa}) so it
    never overflows for large Peclet numbers. a = 0 gives the straight line.
    """
    x = np.asarray(x, dtype=np.float64)
    a, k, l = problem.a, problem.kappa, problem.ell
    if a == 0:
        s = x / l
    elif a > 0:
        s = np.exp(a * (x - l) / k) * np.expm1(-a * x / k) / np.expm1(-a * l / k)
    else:
        s = np.expm1(a * x / k) / np.expm1(a * l / k)
    return problem.g0 + (problem.g1 - problem.g0) * s


@dataclass
class TridiagonalSystem:
    """``sub[i]`` multiplies u_{i-1} in row i+1; ``sup[i]`` multiplies u_{i+1} in row i."""

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        self.sub = np.asarray(self.sub, dtype=np.float64)
        self.diag = np.asarray(self.diag, dtype=np.float64)
        self.sup = np.asarray(self.sup, dtype=np.float64)
        self.rhs = np.asarray(self.rhs, dtype=np.float64)
        n = self.diag.size
        if self.sub.size != n - 1 or self.sup.size != n - 1 or self.rhs.size != n:
            raise ValueError("inconsistent tridiagonal lengths")

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.sub, -1) + np.diag(self.sup, 1)


def thomas_solve(sys: TridiagonalSystem) -> np.ndarray:
    """Forward elimination and back substitution without pivoting."""
    n = sys.diag.size
    c = np.empty(max(n - 1, 0))
    d = np.empty(n)
    piv = sys.diag[0]
    if piv == 0.0:
        raise SingularSystemError("zero pivot in row 0")
    if n > 1:
        c[0] = sys.sup[0] / piv
    d[0] = sys.rhs[0] / piv
    for i in range(1, n):
        piv = sys.diag[i] - sys.sub[i - 1] * c[i - 1]
        if piv == 0.0:
            raise SingularSystemError(f"zero pivot in row {i}")
        if i < n - 1:
            c[i] = sys.sup[i] / piv
        d[i] = (sys.rhs[i] - sys.sub[i - 1] * d[i - 1]) / piv
    u = np.empty(n)
    u[-1] = d[-1]
    for i in range(n - 2, -1, -1):
        u[i] = d[i] - c[i] * u[i + 1]
    return u


def assemble_fd(problem: AdvDiffProblem, N: int) -> TridiagonalSystem:
    """Central differences on N cells (N - 1 interior unknowns)."""
    if N < 3:
        raise ValueError("N must be at least 3")
    h = problem.ell / N
    a, k = problem.a, problem.kappa
    alpha = -a / (2 * h) - k / h**2
    beta = 2 * k / h**2
    gamma = a / (2 * h) - k / h**2
    x = h * np.arange(1, N)
    rhs = problem.source(x).copy()
    rhs[0] -= alpha * problem.g0
    rhs[-1] -= gamma * problem.g1
    n = N - 1
    return TridiagonalSystem(np.full(n - 1, alpha), np.full(n, beta), np.full(n - 1, gamma), rhs)


def solve_fd(problem: AdvDiffProblem, N: int) -> GridFunction:
    interior = thomas_solve(assemble_fd(problem, N))
    x = np.linspace(0.0, problem.ell, N + 1)
    return GridFunction(x, np.concatenate([[problem.g0], interior, [problem.g1]]))


def convergence_order(errors, Ns) -> np.ndarray:
    """Observed orders log(e_i / e_{i+1}) / log(N_{i+1} / N_i)."""
    e = np.asarray(errors, dtype=np.float64)
    n = np.asarray(Ns, dtype=np.float64)
    return np.log(e[:-1] / e[1:]) / np.log(n[1:] / n[:-1])


def chebyshev_eval(N: int, xi):
    """T_n, T_n' and T_n'' for n = 0..N by the three-term recurrences.

    Returns three arrays of shape ``(N + 1,) + shape(xi)``.
    """
    xi = np.asarray(xi, dtype=np.float64)
    if np.any(np.abs(xi) > 1.0 + 1e-14):
        raise ValueError("Chebyshev argument must lie in [-1, 1]")
    T = np.zeros((N + 1,) + xi.shape)
    dT = np.zeros_like(T)
    d2T = np.zeros_like(T)
    T[0] = 1.0
    if N >= 1:
        T[1] = xi
        dT[1] = 1.0
    for n in range(1, N):
        T[n + 1] = 2 * xi * T[n] - T[n - 1]
        dT[n + 1] = 2 * T[n] + 2 * xi * dT[n] - dT[n - 1]
        d2T[n + 1] = 4 * dT[n] + 2 * xi * d2T[n] - d2T[n - 1]
    return T, dT, d2T


def collocation_points(N: int, ell: float = 1.0, rule: str = "cgl") -> np.ndarray:
    """N - 1 interior points of (0, l).

    ``cgl``: Chebyshev-Gauss-Lobatto interior nodes; ``uniform``: equispaced.
    """
    j = np.arange(1, N)
    if rule == "cgl":
        xi = -np.cos(np.pi * j / N)
    elif rule == "uniform":
        xi = -1.0 + 2.0 * j / N
    else:
        raise ValueError(f"unknown point rule {rule!r}")
    return ell * (xi + 1.0) / 2.0


def _basis(N, x, ell):
    xi = np.clip(2.0 * np.asarray(x, dtype=np.float64) / ell - 1.0, -1.0, 1.0)
    T, dT, d2T = chebyshev_eval(N, xi)
    return T, dT * (2.0 / ell), d2T * (4.0 / ell**2)


@dataclass
class SpectralSolution:
    coeffs: np.ndarray
    ell: float = 1.0

    def __call__(self, x) -> np.ndarray:
        T, _, _ = _basis(self.coeffs.size - 1, x, self.ell)
        return np.tensordot(self.coeffs, T, axes=1)


def _operator_rows(problem, N, pts):
    T, dT, d2T = _basis(N, pts, problem.ell)
    return (problem.a * dT - problem.kappa * d2T).T  # (len(pts), N + 1)


def solve_spectral(problem: AdvDiffProblem, N: int, rule: str = "cgl") -> SpectralSolution:
    """Collocation with phi_n(x) = T_n(2x/l - 1): two boundary rows plus N - 1 interior rows."""
    if N < 1:
        raise ValueError("N must be at least 1")
    pts = collocation_points(N, problem.ell, rule)
    K = np.empty((N + 1, N + 1))
    rhs = np.empty(N + 1)
    K[0] = _basis(N, 0.0, problem.ell)[0]
    rhs[0] = problem.g0
    K[1:N] = _operator_rows(problem, N, pts)
    rhs[1:N] = problem.source(pts)
    K[N] = _basis(N, problem.ell, problem.ell)[0]
    rhs[N] = problem.g1
    if np.linalg.cond(K) > 1e14:
        raise SingularSystemError("collocation matrix is singular; try another point rule")
    return SpectralSolution(np.linalg.solve(K, rhs), problem.ell)


def _lsq_mats(problem, N, pts):
    A = _operator_rows(problem, N, pts)
    B = np.stack([_basis(N, 0.0, problem.ell)[0], _basis(N, problem.ell, problem.ell)[0]])
    return A, B


def spectral_lsq_loss(problem: AdvDiffProblem, coeffs, points, lam: float = 1.0, parts: bool = False, mats=None):
    """Pi = Pi_int + lam * Pi_bc for coefficient vector ``coeffs`` (array or Var).

    Pi_int is the mean squared residual over ``points``; Pi_bc the summed
    squared boundary mismatch at both ends.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    pts = np.asarray(points, dtype=np.float64)
    N = ad._shape(coeffs)[0] - 1
    A, B = _lsq_mats(problem, N, pts) if mats is None else mats
    if pts.size:
        r = ad.sub(ad.reshape(ad.matmul(A, ad.reshape(coeffs, (N + 1, 1))), (pts.size,)), problem.source(pts))
        p_int = ad.mul(ad.sum(ad.square(r)), 1.0 / pts.size)
    else:
        p_int = ad.mul(ad.sum(coeffs), 0.0)
    rb = ad.sub(ad.reshape(ad.matmul(B, ad.reshape(coeffs, (N + 1, 1))), (2,)), np.array([problem.g0, problem.g1]))
    p_bc = ad.sum(ad.square(rb))
    total = ad.add(p_int, ad.mul(p_bc, lam)) if lam else p_int
    if parts:
        return total, p_int, p_bc
    return total


@dataclass
class LsqFit:
    coeffs: np.ndarray
    history: list = field(default_factory=list)


def spectral_lsq_fit(
    problem: AdvDiffProblem,
    N: int,
    points=None,
    lam: float = 1.0,
    iterations: int = 20000,
    lr: float = 0.05,
    tol: float = 0.0,
) -> LsqFit:
    """Minimize the least-squares loss with Adam from zero coefficients.

    The gradient is taken by reverse-mode differentiation of
    :func:`spectral_lsq_loss`. Stops early once the loss drops below
    ``tol``.
    """
    from .optim import OptimizerState, adam_step

    pts = collocation_points(N, problem.ell) if points is None else np.asarray(points, dtype=np.float64)
    state = OptimizerState("adam", lr)
    u = np.zeros(N + 1)
    mats = _lsq_mats(problem, N, pts)
    hist = []
    for _ in range(iterations):
        tape = ad.Tape()
        c = tape.leaf(u)
        loss = spectral_lsq_loss(problem, c, pts, lam, mats=mats)
        (g,) = ad.grad(loss, [c])
        hist.append(float(loss.value))
        if hist[-1] < tol or not math.isfinite(hist[-1]):
            break
        u = adam_step(state, u, g)
    return LsqFit(u, hist)
