"""Radix-2 FFT, periodic 2D Fourier coefficients and spectral convolution.

Conventions on a periodic grid x_m = m h, h = L / N (endpoint excluded):

    u_hat[r, s] = (1 / (N1 N2)) sum_{m,n} u[m, n] exp(-2 pi i (r m / N1 + s n / N2))
    u[m, n]     = sum_{r,s} u_hat[r, s] exp(+2 pi i (r m / N1 + s n / N2))

Mode r is stored at index r mod N, so negative modes sit at the top.

The spectral convolution evaluates

    v_i(x) = int kappa_ij(y - x) u_j(y) dy
           = L1 L2 sum_{|m|<=k1, |n|<=k2} u_hat_j[m, n] kappa_hat_ij[-m, -n] e^{2 pi i (m x1/L1 + n x2/L2)}

with kappa_hat stored on the centred mode block, shape (H_out, H_in, 2 k1 + 1, 2 k2 + 1).
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad

__all__ = [
    "fft",
    "ifft",
    "naive_dft",
    "fft2",
    "ifft2",
    "dft2",
    "idft2",
    "mode_indices",
    "is_conjugate_symmetric",
    "symmetrize",
    "spectral_conv",
    "spectral_conv_bruteforce",
    "kernel_samples",
]


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


_BITREV: dict = {}


def _bitrev(n: int) -> np.ndarray:
    if n not in _BITREV:
        bits = n.bit_length() - 1
        idx = np.arange(n)
        rev = np.zeros(n, dtype=np.int64)
        for b in range(bits):
            rev |= ((idx >> b) & 1) << (bits - 1 - b)
        _BITREV[n] = rev
    return _BITREV[n]


def fft(x, inverse: bool = False) -> np.ndarray:
    """Unnormalised iterative Cooley-Tukey transform along the last axis.

    Forward: X[k] = sum_n x[n] e^{-2 pi i k n / N}; ``inverse`` flips the
    sign of the exponent (still without the 1/N factor).
    """
    x = np.asarray(x, dtype=np.complex128)
    N = x.shape[-1]
    if not _is_pow2(N):
        raise ValueError(f"FFT length must be a power of two, got {N}")
    lead = x.shape[:-1]
    y = x[..., _bitrev(N)].reshape(-1, N)
    sign = 1.0 if inverse else -1.0
    m = 1
    while m < N:
        w = np.exp(sign * 1j * np.pi * np.arange(m) / m)
        y = y.reshape(y.shape[0], N // (2 * m), 2, m)
        even = y[:, :, 0, :]
        odd = y[:, :, 1, :] * w
        y = np.concatenate([even + odd, even - odd], axis=-1)
        m *= 2
    return y.reshape(lead + (N,))


def ifft(X) -> np.ndarray:
    """Inverse of :func:`fft` including the 1/N factor."""
    X = np.asarray(X, dtype=np.complex128)
    return fft(X, inverse=True) / X.shape[-1]


def naive_dft(x, inverse: bool = False) -> np.ndarray:
    """O(N^2) reference transform with the conventions of :func:`fft`."""
    x = np.asarray(x, dtype=np.complex128)
    N = x.shape[-1]
    n = np.arange(N)
    sign = 1.0 if inverse else -1.0
    F = np.exp(sign * 2j * np.pi * np.outer(n, n) / N)
    return x @ F.T


def fft2(x, inverse: bool = False) -> np.ndarray:
    """Unnormalised 2D transform over the last two axes (row-column passes)."""
    y = fft(x, inverse)
    return np.swapaxes(fft(np.swapaxes(y, -1, -2), inverse), -1, -2)


def ifft2(X) -> np.ndarray:
    X = np.asarray(X)
    return fft2(X, inverse=True) / (X.shape[-1] * X.shape[-2])


def dft2(u) -> np.ndarray:
    """Fourier coefficients u_hat[r, s] of a periodic grid function (last two axes).

    The lengths L1, L2 cancel: h1 h2 / (L1 L2) = 1 / (N1 N2).
    """
    u = np.asarray(u)
    return fft2(u) / (u.shape[-1] * u.shape[-2])


def idft2(coeffs) -> np.ndarray:
    """Grid values from coefficients (complex; real part for real fields)."""
    return fft2(coeffs, inverse=True)


def mode_indices(N: int, k: int) -> np.ndarray:
    """Storage indices of modes -k..k on an N-point grid."""
    if 2 * k >= N and not (N == 1 and k == 0):
        raise ValueError(f"k_max={k} needs more than {2 * k} grid points, got {N}")
    return np.arange(-k, k + 1) % N


def _flip(K):
    return K[..., ::-1, ::-1]


def is_conjugate_symmetric(K, tol: float = 1e-12) -> bool:
    K = np.asarray(K)
    scale = max(np.max(np.abs(K), initial=0.0), 1.0)
    return bool(np.max(np.abs(K - np.conj(_flip(K))), initial=0.0) <= tol * scale)


def symmetrize(K) -> np.ndarray:
    """Projection onto kappa_hat[-m, -n] = conj(kappa_hat[m, n])."""
    K = np.asarray(K, dtype=np.complex128)
    return 0.5 * (K + np.conj(_flip(K)))


def _sc_forward(U, Kre, Kim, lengths=(1.0, 1.0)):
    # U: (B, N1, N2, Hin) real; K: (Hout, Hin, M1, M2)
    B, N1, N2, Hin = U.shape
    M1, M2 = Kre.shape[2:]
    k1, k2 = (M1 - 1) // 2, (M2 - 1) // 2
    i1, i2 = mode_indices(N1, k1), mode_indices(N2, k2)
    Uh = fft2(np.moveaxis(U, -1, 1)) / (N1 * N2)  # (B, Hin, N1, N2)
    Ur = Uh[:, :, i1][:, :, :, i2]
    Kf = _flip(Kre + 1j * Kim)
    scale = lengths[0] * lengths[1]
    C = scale * np.einsum("bjmn,ijmn->bimn", Ur, Kf)
    full = np.zeros((B, Kre.shape[0], N1, N2), dtype=np.complex128)
    full[:, :, i1[:, None], i2[None, :]] = C
    v = fft2(full, inverse=True).real
    return np.moveaxis(v, 1, -1)


def _sc_vjp(g, out, U, Kre, Kim, lengths=(1.0, 1.0)):
    B, N1, N2, Hin = U.shape
    M1, M2 = Kre.shape[2:]
    k1, k2 = (M1 - 1) // 2, (M2 - 1) // 2
    i1, i2 = mode_indices(N1, k1), mode_indices(N2, k2)
    scale = lengths[0] * lengths[1]
    Uh = fft2(np.moveaxis(U, -1, 1)) / (N1 * N2)
    Ur = Uh[:, :, i1][:, :, :, i2]
    Gc = fft2(np.moveaxis(g, -1, 1))[:, :, i1][:, :, :, i2]  # d/dRe + i d/dIm of the mode block
    Kf = _flip(Kre + 1j * Kim)
    gKf = scale * np.einsum("bimn,bjmn->ijmn", Gc, np.conj(Ur))
    gK = _flip(gKf)
    gUr = scale * np.einsum("bimn,ijmn->bjmn", Gc, np.conj(Kf))
    full = np.zeros((B, Hin, N1, N2), dtype=np.complex128)
    full[:, :, i1[:, None], i2[None, :]] = gUr
    gU = fft2(full, inverse=True).real / (N1 * N2)
    return np.moveaxis(gU, 1, -1), gK.real.copy(), gK.imag.copy()


ad.register("spectral_conv", _sc_forward, _sc_vjp, graph_ok=False)


def spectral_conv(u, kappa_hat, lengths=(1.0, 1.0), check: bool = True):
    """Spectral convolution of an H_in-channel field ``u`` of shape (N1, N2, H_in).

    ``kappa_hat`` is complex with shape (H_out, H_in, 2 k1 + 1, 2 k2 + 1)
    and must be conjugate symmetric. A leading batch axis on ``u`` is
    allowed. Returns real values of shape (N1, N2, H_out).
    """
    K = np.asarray(kappa_hat, dtype=np.complex128)
    if check and not is_conjugate_symmetric(K):
        raise ValueError("kappa_hat violates conjugate symmetry; outputs would not be real")
    U = np.asarray(u, dtype=np.float64)
    single = U.ndim == 3
    if single:
        U = U[None]
    v = _sc_forward(U, K.real, K.imag, tuple(lengths))
    return v[0] if single else v


def kernel_samples(kappa_hat, N1: int, N2: int) -> np.ndarray:
    """kappa(z) on the grid z = (p h1, q h2) from its retained coefficients.

    Shape (H_out, H_in, N1, N2); real for conjugate-symmetric input.
    """
    K = np.asarray(kappa_hat, dtype=np.complex128)
    M1, M2 = K.shape[2:]
    i1, i2 = mode_indices(N1, (M1 - 1) // 2), mode_indices(N2, (M2 - 1) // 2)
    full = np.zeros(K.shape[:2] + (N1, N2), dtype=np.complex128)
    full[:, :, i1[:, None], i2[None, :]] = K
    return fft2(full, inverse=True).real


def spectral_conv_bruteforce(u, kappa_hat, lengths=(1.0, 1.0)) -> np.ndarray:
    """Direct sum v_i[m, n] = sum_{r,s,j} kappa_ij[r - m, s - n] u_j[r, s] h1 h2 (periodic)."""
    U = np.asarray(u, dtype=np.float64)
    N1, N2, Hin = U.shape
    kap = kernel_samples(kappa_hat, N1, N2)
    h1, h2 = lengths[0] / N1, lengths[1] / N2
    Hout = kap.shape[0]
    v = np.zeros((N1, N2, Hout))
    r = np.arange(N1)
    s = np.arange(N2)
    for m in range(N1):
        for n in range(N2):
            sub = kap[:, :, (r - m) % N1][:, :, :, (s - n) % N2]  # (Hout, Hin, N1, N2)
            v[m, n] = np.einsum("ijrs,rsj->i", sub, U) * h1 * h2
    return v
