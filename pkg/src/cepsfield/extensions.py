"""Missing data and signal extraction for lattice fields.

Both features reduce to conditioning one Gaussian vector on another.  A
SelectionMap marks the observed sites; the selection operator is never
materialized, sub-covariances are taken by index slicing.
"""

from dataclasses import dataclass

import numpy as np

from .covariance import assemble, factor_matrix, gaussian_core, whiten
from .lattice import _conform_beta
from .model import DEFAULT_TRUNCATION
from .objectives import DEFAULT_MESH_ORDER, model_acf

DENSE_COV_SITE_LIMIT = 1024


@dataclass(frozen=True)
class SelectionMap:
    """Boolean keep-mask over the lattice; True marks an observed site."""

    keep: np.ndarray

    def __post_init__(self):
        keep = np.asarray(self.keep, dtype=bool)
        if keep.ndim != 2:
            raise ValueError("keep must be a 2-D boolean lattice")
        if not keep.any():
            raise ValueError("selection keeps no sites")
        keep = np.array(keep, copy=True)
        keep.flags.writeable = False
        object.__setattr__(self, "keep", keep)

    @classmethod
    def all_observed(cls, n_rows, n_cols):
        return cls(keep=np.ones((n_rows, n_cols), dtype=bool))

    @classmethod
    def drop_cells(cls, n_rows, n_cols, cells):
        """Drop the given (row, col) pairs, zero-based."""
        keep = np.ones((n_rows, n_cols), dtype=bool)
        for r, c in cells:
            keep[r, c] = False
        return cls(keep=keep)

    @property
    def n_observed(self):
        return int(self.keep.sum())

    def indices(self):
        """Positions of observed sites in the vectorized order."""
        return np.flatnonzero(self.keep.ravel())


def missing_loglik(
    sample,
    grid,
    beta=None,
    selection=None,
    *,
    route="mesh",
    mesh_order=DEFAULT_MESH_ORDER,
    K=DEFAULT_TRUNCATION,
):
    """Exact Gaussian log likelihood of the observed sub-vector.

    Deleting sites contracts the mean and covariance to the observed index
    set; with a full selection this reproduces the complete-data likelihood
    exactly, since the same factorization runs on the same matrix.
    """
    beta = _conform_beta(beta, sample.design.shape[1])
    if selection is None:
        selection = SelectionMap.all_observed(sample.n_rows, sample.n_cols)
    if selection.keep.shape != sample.values.shape:
        raise ValueError("selection shape disagrees with the lattice")
    idx = selection.indices()
    resid = sample.vector() - (sample.design @ beta if beta.size else 0.0)
    H = max(sample.n_rows, sample.n_cols) - 1
    acf = model_acf(grid, H, route=route, mesh_order=mesh_order, K=K)
    cov = assemble(acf, sample.n_rows, sample.n_cols)
    sigma = cov.sigma[np.ix_(idx, idx)]
    return gaussian_core(sigma, resid[idx])


@dataclass(frozen=True)
class SignalNoiseSpec:
    """Additive decomposition: observed = signal + noise, independent fields.

    ``mean_assignment`` flags which design columns belong to the signal's
    mean surface; unflagged columns belong to the noise.
    """

    signal: object
    noise: object
    mean_assignment: np.ndarray = None


@dataclass(frozen=True)
class ExtractionResult:
    mean: np.ndarray
    sd: np.ndarray
    cov: np.ndarray


def extract_signal(
    sample,
    spec,
    selection=None,
    beta=None,
    *,
    route="mesh",
    mesh_order=DEFAULT_MESH_ORDER,
    K=DEFAULT_TRUNCATION,
    dense_cov_limit=DENSE_COV_SITE_LIMIT,
):
    """Conditional mean and spread of the signal field given the data.

    For observed vector Z = J(S + N) with mean mu = X beta split between
    signal and noise by ``mean_assignment``, returns

        E[S | Z] = E[S] + Sigma_S J' (J (Sigma_S + Sigma_N) J')^-1 (Z - J mu)

    and the matching conditional covariance, evaluated over the full
    lattice including unobserved sites.  The dense conditional covariance
    is returned only up to ``dense_cov_limit`` sites; beyond that only the
    pointwise standard deviations are computed.
    """
    nr, nc = sample.n_rows, sample.n_cols
    n = nr * nc
    if selection is None:
        selection = SelectionMap.all_observed(nr, nc)
    if selection.keep.shape != (nr, nc):
        raise ValueError("selection shape disagrees with the lattice")
    L = sample.design.shape[1]
    beta = _conform_beta(beta, L) if (beta is not None or L == 0) else None
    if L > 0 and beta is None:
        raise ValueError("sample has a design; pass the regression vector beta")
    assign = spec.mean_assignment
    if assign is None:
        assign = np.zeros(L, dtype=bool)
    assign = np.asarray(assign, dtype=bool)
    if assign.shape != (L,):
        raise ValueError(f"mean_assignment must have length {L}")

    H = max(nr, nc) - 1
    sig_s = assemble(model_acf(spec.signal, H, route=route, mesh_order=mesh_order, K=K), nr, nc).sigma
    sig_n = assemble(model_acf(spec.noise, H, route=route, mesh_order=mesh_order, K=K), nr, nc).sigma

    if L > 0:
        mu = sample.design @ beta
        mean_s = sample.design[:, assign] @ beta[assign]
    else:
        mu = np.zeros(n)
        mean_s = np.zeros(n)

    idx = selection.indices()
    total_obs = (sig_s + sig_n)[np.ix_(idx, idx)]
    fac = factor_matrix(total_obs)
    innov = sample.vector()[idx] - mu[idx]
    cross = sig_s[:, idx]
    # Sigma_S J' (J Sigma J')^-1 applied through two triangular solves
    w = whiten(fac, innov)
    Wc = whiten(fac, cross.T)
    cond_mean = mean_s + Wc.T @ w

    if n <= dense_cov_limit:
        cond_cov = sig_s - Wc.T @ Wc
        cond_cov = 0.5 * (cond_cov + cond_cov.T)
        var = np.diag(cond_cov).copy()
    else:
        cond_cov = None
        var = np.diag(sig_s) - np.einsum("ij,ij->j", Wc, Wc)
    var = np.clip(var, 0.0, None)
    return ExtractionResult(
        mean=cond_mean.reshape(nr, nc),
        sd=np.sqrt(var).reshape(nr, nc),
        cov=cond_cov,
    )
