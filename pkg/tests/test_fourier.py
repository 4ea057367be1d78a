import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sciml.operatornet import fourier as ft
from sciml.tensor import Rng


def random_kernel(r, H, k1, k2):
    K = r.normal((H, H, 2 * k1 + 1, 2 * k2 + 1)) + 1j * r.normal((H, H, 2 * k1 + 1, 2 * k2 + 1))
    return ft.symmetrize(K)


class TestFft:
    @pytest.mark.parametrize("N", [1, 2, 4, 8, 16, 32, 64])
    def test_matches_naive(self, N):
        x = Rng(N).normal(N) + 1j * Rng(N + 100).normal(N)
        assert np.max(np.abs(ft.fft(x) - ft.naive_dft(x))) < 1e-12
        assert np.max(np.abs(ft.fft(x, inverse=True) - ft.naive_dft(x, inverse=True))) < 1e-12

    def test_delta(self):
        x = np.zeros(16)
        x[0] = 1.0
        np.testing.assert_array_equal(ft.fft(x), np.ones(16))

    def test_not_power_of_two(self):
        with pytest.raises(ValueError):
            ft.fft(np.ones(12))

    def test_round_trip(self):
        x = Rng(0).normal((3, 32))
        np.testing.assert_allclose(ft.ifft(ft.fft(x)).real, x, atol=1e-13)

    def test_batched_rows(self):
        x = Rng(1).normal((4, 8))
        np.testing.assert_allclose(ft.fft(x), np.array([ft.fft(row) for row in x]), atol=1e-14)

    def test_faster_than_naive(self):
        x = Rng(2).normal(4096)
        ft.fft(x)  # warm the bit-reversal cache
        t0 = time.perf_counter()
        for _ in range(3):
            ft.fft(x)
        t_fft = (time.perf_counter() - t0) / 3
        t0 = time.perf_counter()
        ft.naive_dft(x)
        t_naive = time.perf_counter() - t0
        assert t_naive > 10 * t_fft


class TestDft2:
    def test_constant(self):
        c = ft.dft2(np.full((8, 4), 2.5))
        assert c[0, 0] == pytest.approx(2.5, abs=1e-15)
        c[0, 0] = 0
        assert np.max(np.abs(c)) < 1e-15

    def test_single_mode(self):
        N = 16
        x = np.arange(N) / N
        u = np.exp(2j * np.pi * x)[:, None] * np.ones((1, 8))
        c_re = ft.dft2(u.real)
        c_im = ft.dft2(u.imag)
        energy = np.abs(c_re) ** 2 + np.abs(c_im) ** 2
        mask = np.zeros_like(energy, dtype=bool)
        mask[1, 0] = mask[-1, 0] = True
        assert energy[~mask].max() < 1e-28
        assert energy[mask].sum() == pytest.approx(1.0)

    @given(st.sampled_from([2, 4, 8, 16]), st.sampled_from([1, 2, 8, 32]), st.integers(0, 2**32))
    @settings(max_examples=30, deadline=None)
    def test_round_trip(self, N1, N2, seed):
        u = Rng(seed).normal((N1, N2))
        assert np.max(np.abs(ft.idft2(ft.dft2(u)).real - u)) < 1e-10

    @given(st.integers(0, 2**32))
    @settings(max_examples=20)
    def test_parseval(self, seed):
        u = Rng(seed).normal((16, 8))
        L1, L2 = 2.0, 0.5
        grid = np.sum(u**2) * (L1 / 16) * (L2 / 8)
        spec = L1 * L2 * np.sum(np.abs(ft.dft2(u)) ** 2)
        assert abs(grid - spec) <= 1e-10 * grid


class TestSpectralConv:
    def test_identity_kernel(self):
        N1, N2, H = 16, 8, 2
        L = (2.0, 1.0)
        x1 = np.arange(N1)[:, None] * L[0] / N1
        x2 = np.arange(N2)[None, :] * L[1] / N2
        u = np.stack([np.cos(2 * np.pi * x1 / L[0]) + 0 * x2, np.sin(2 * np.pi * (x1 / L[0] + 2 * x2 / L[1]))], axis=-1)
        K = np.zeros((H, H, 7, 7), dtype=complex)
        K[np.arange(H), np.arange(H)] = 1.0 / (L[0] * L[1])
        np.testing.assert_allclose(ft.spectral_conv(u, K, L), u, atol=1e-13)

    def test_mean_projection(self):
        u = Rng(0).normal((8, 8, 1))
        K = np.zeros((1, 1, 3, 3), dtype=complex)
        K[0, 0, 1, 1] = 1.0
        v = ft.spectral_conv(u, K)
        np.testing.assert_allclose(v, np.full_like(v, u.mean()), atol=1e-14)

    def test_rejects_asymmetric(self):
        K = np.zeros((1, 1, 3, 3), dtype=complex)
        K[0, 0, 0, 0] = 1j
        with pytest.raises(ValueError):
            ft.spectral_conv(np.ones((8, 8, 1)), K)

    def test_real_output(self):
        r = Rng(3)
        K = random_kernel(r, 2, 2, 2)
        U = r.normal((8, 8, 2))
        i1 = ft.mode_indices(8, 2)
        full = np.zeros((2, 8, 8), dtype=complex)
        Uh = ft.dft2(np.moveaxis(U, -1, 0))
        Kf = K[..., ::-1, ::-1]
        full[:, i1[:, None], i1[None, :]] = np.einsum("jmn,ijmn->imn", Uh[:, i1][:, :, i1], Kf)
        assert np.max(np.abs(ft.idft2(full).imag)) < 1e-10

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_bruteforce(self, seed):
        r = Rng(seed)
        K = random_kernel(r, 2, 2, 3)
        U = r.normal((8, 8, 2))
        L = (1.0, 3.0)
        assert np.max(np.abs(ft.spectral_conv(U, K, L) - ft.spectral_conv_bruteforce(U, K, L))) < 1e-8

    @given(st.integers(0, 2**32), st.floats(-2, 2), st.integers(0, 7), st.integers(0, 7))
    @settings(max_examples=25, deadline=None)
    def test_linear_and_shift_equivariant(self, seed, a, s1, s2):
        r = Rng(seed)
        K = random_kernel(r, 2, 2, 2)
        U, V = r.normal((8, 8, 2)), r.normal((8, 8, 2))
        lhs = ft.spectral_conv(a * U + V, K)
        np.testing.assert_allclose(lhs, a * ft.spectral_conv(U, K) + ft.spectral_conv(V, K), atol=1e-11)
        shifted = ft.spectral_conv(np.roll(U, (s1, s2), axis=(0, 1)), K)
        np.testing.assert_allclose(shifted, np.roll(ft.spectral_conv(U, K), (s1, s2), axis=(0, 1)), atol=1e-11)

    def test_too_many_modes(self):
        with pytest.raises(ValueError):
            ft.mode_indices(8, 4)
