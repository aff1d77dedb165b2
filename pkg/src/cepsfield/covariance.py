"""Dense covariance assembly, factorization, and simulation.

The covariance of the vectorized lattice is block Toeplitz with Toeplitz
blocks: for sites (r, s) and (a, b), Cov equals gamma(a - r, b - s).  The
matrix is stored dense; the sizes this package targets (a few thousand
sites) factor in milliseconds and dense storage keeps every downstream
operation a plain BLAS call.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import lapack, solve_triangular, cho_solve


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky failure; the message names the offending leading minor."""


@dataclass(frozen=True)
class BlockToeplitzCov:
    n_rows: int
    n_cols: int
    sigma: np.ndarray

    @property
    def n(self):
        return self.n_rows * self.n_cols


@dataclass(frozen=True)
class CholFactor:
    """Lower Cholesky factor with its log determinant."""

    L: np.ndarray
    logdet: float


@lru_cache(maxsize=8)
def _lag_indices(n_rows, n_cols):
    k = np.arange(n_rows * n_cols)
    r = k // n_cols
    s = k % n_cols
    dr = r[None, :] - r[:, None]
    ds = s[None, :] - s[:, None]
    return dr, ds


def assemble(acf, n_rows, n_cols):
    """Covariance matrix of the vectorized lattice from an acf table.

    Requires the table to cover lags up to max(n_rows, n_cols) - 1.
    """
    need = max(n_rows, n_cols) - 1
    if acf.H < need:
        raise ValueError(f"acf table covers |h| <= {acf.H}; the lattice needs {need}")
    dr, ds = _lag_indices(n_rows, n_cols)
    sigma = acf.gamma[dr + acf.H, ds + acf.H]
    return BlockToeplitzCov(n_rows=n_rows, n_cols=n_cols, sigma=sigma)


def factor_matrix(sigma):
    """Cholesky of a symmetric matrix given as a plain array."""
    c, info = lapack.dpotrf(sigma, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(
            f"covariance is not positive definite: leading minor of order {info} failed"
        )
    if info < 0:
        raise ValueError(f"invalid argument {-info} passed to the Cholesky routine")
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    return CholFactor(L=c, logdet=logdet)


def factor(cov):
    return factor_matrix(cov.sigma)


def whiten(fac, vec):
    """Solve L z = vec; whitens residuals drawn from the factored covariance."""
    return solve_triangular(fac.L, vec, lower=True)


def quad_form(fac, vec):
    """vec' Sigma^-1 vec via the triangular solve."""
    z = whiten(fac, vec)
    return float(z @ z)


def solve(fac, B):
    """Sigma^-1 B for a vector or matrix B."""
    return cho_solve((fac.L, True), B)


def gaussian_core(sigma, resid):
    """Log density core -0.5*logdet - 0.5*quad, shared by full and missing data."""
    fac = factor_matrix(sigma)
    return -0.5 * fac.logdet - 0.5 * quad_form(fac, resid)


def simulate(cov, mean=0.0, seed=None, n_draws=1):
    """Gaussian draws from the assembled covariance.

    Uses the lower Cholesky factor and numpy's default PCG64 generator
    seeded with ``seed``, so draws are reproducible across runs.  Returns an
    (n_rows, n_cols) lattice for a single draw, else (n_draws, n_rows,
    n_cols).  ``mean`` may be a scalar, a length-n vector, or a lattice.
    """
    fac = factor(cov)
    n = cov.n
    mu = np.asarray(mean, dtype=float)
    if mu.ndim == 2:
        mu = mu.ravel()
    rng = np.random.default_rng(seed)
    # draw row by row so the first draw of a batch equals a single draw
    eps = rng.standard_normal((n_draws, n))
    draws = eps @ fac.L.T + mu
    draws = draws.reshape(n_draws, cov.n_rows, cov.n_cols)
    if n_draws == 1:
        return draws[0]
    return draws
