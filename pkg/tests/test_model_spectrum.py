"""Log-spectrum evaluation against a naive double-sum oracle."""

import numpy as np
import pytest

from cepsfield.model import (
    CepstralGrid,
    SpectralMesh,
    log_spectrum_on_mesh,
    spectrum_on_mesh,
)

from conftest import random_grid


def naive_log_spectrum(grid, lam1, lam2):
    """Direct evaluation of sum Theta[j,k] exp(-i(j lam1 + k lam2))."""
    p = grid.p
    total = 0.0 + 0.0j
    for j in range(-p, p + 1):
        for k in range(-p, p + 1):
            total += grid.value_at(j, k) * np.exp(-1j * (j * lam1 + k * lam2))
    assert abs(total.imag) < 1e-12
    return total.real


@pytest.mark.parametrize("p", [1, 2, 3])
def test_direct_matches_naive_sum(p, rng):
    g = random_grid(p, rng)
    M = 5
    values = log_spectrum_on_mesh(g, M, method="direct")
    u = np.arange(-M, M + 1)
    for a in (0, 3, 2 * M):
        for b in (0, 7, 2 * M):
            expect = naive_log_spectrum(g, np.pi * u[a] / M, np.pi * u[b] / M)
            np.testing.assert_allclose(values[a, b], expect, rtol=0, atol=1e-12)


@pytest.mark.parametrize("M", [8, 64, 137])
def test_fft_matches_direct(M, rng):
    g = random_grid(2, rng)
    np.testing.assert_allclose(
        log_spectrum_on_mesh(g, M, method="fft"),
        log_spectrum_on_mesh(g, M, method="direct"),
        rtol=0,
        atol=1e-10,
    )


def test_fft_small_mesh_falls_back(rng):
    # M <= p would fold distinct coefficients onto one another in a plain
    # 2M-point transform; the fft entry point must still be correct there.
    g = random_grid(3, rng)
    np.testing.assert_allclose(
        log_spectrum_on_mesh(g, 3, method="fft"),
        log_spectrum_on_mesh(g, 3, method="direct"),
        rtol=0,
        atol=1e-12,
    )


def test_auto_dispatch_consistent(rng):
    g = random_grid(1, rng)
    for M in (4, 80):
        np.testing.assert_allclose(
            log_spectrum_on_mesh(g, M),
            log_spectrum_on_mesh(g, M, method="direct"),
            rtol=0,
            atol=1e-10,
        )


def test_white_noise_spectrum_is_flat():
    g = CepstralGrid.zeros(1)
    values = log_spectrum_on_mesh(g, 16)
    np.testing.assert_array_equal(values, np.zeros((33, 33)))


def test_origin_coefficient_scales_spectrum():
    g = CepstralGrid.from_free_params(1, np.array([0.7, 0, 0, 0, 0]))
    F = spectrum_on_mesh(g, 12).values
    np.testing.assert_allclose(F, np.exp(0.7), rtol=0, atol=1e-12)


def test_mesh_values_symmetric_under_frequency_flip(rng):
    g = random_grid(2, rng)
    values = log_spectrum_on_mesh(g, 20)
    np.testing.assert_allclose(values, values[::-1, ::-1], rtol=0, atol=1e-12)


def test_both_boundary_lines_equal(rng):
    # u = -M and u = +M are the same frequency modulo 2 pi
    g = random_grid(2, rng)
    values = log_spectrum_on_mesh(g, 15)
    np.testing.assert_allclose(values[0, :], values[-1, :], rtol=0, atol=1e-12)
    np.testing.assert_allclose(values[:, 0], values[:, -1], rtol=0, atol=1e-12)


def test_spectral_mesh_validates_positivity():
    with pytest.raises(ValueError):
        SpectralMesh(M=2, values=np.full((5, 5), -1.0))
    with pytest.raises(ValueError):
        SpectralMesh(M=2, values=np.ones((4, 4)))


def test_unknown_method_rejected(rng):
    with pytest.raises(ValueError):
        log_spectrum_on_mesh(random_grid(1, rng), 8, method="cube")
