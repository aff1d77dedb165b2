"""Fitting objectives: exact Gaussian likelihood, Whittle discrepancies, GLS.

All objectives are written to be minimized or maximized over the free
cepstral coefficients at a fixed regression vector; `gls_beta` provides the
matching regression update, and estimation alternates the two.

The Whittle discrepancy of a spectrum F against an empirical spectrum built
from sample autocovariances gamma_hat is the Kullback-Leibler style quantity

    KL_hat(F) = <log F> + sum_h gamma_hat(h) * gamma_h(1/F),

where <.> averages over frequencies and gamma_h(1/F) are the
autocovariances of the reciprocal spectrum.  For a cepstral model <log F>
is just Theta[0, 0] and 1/F is the model with negated coefficients, which
is what makes the lag-domain form ("whittle_exact") cheap and free of any
frequency mesh.
"""

from dataclasses import dataclass

import numpy as np

from .covariance import assemble, factor, gaussian_core, whiten
from .lattice import _conform_beta, periodogram_ft, sample_acf
from .model import (
    DEFAULT_TRUNCATION,
    acf_exact,
    acf_mesh,
    log_spectrum_on_mesh,
    spectrum_on_mesh,
)

DEFAULT_MESH_ORDER = 200


@dataclass(frozen=True)
class ObjectiveValue:
    value: float
    kind: str
    grid: object
    beta: np.ndarray


def model_acf(grid, H, route="mesh", mesh_order=DEFAULT_MESH_ORDER, K=DEFAULT_TRUNCATION):
    """Model acf table by the requested route, sized for a target lag extent."""
    if route == "mesh":
        M = max(mesh_order, H, grid.p, 1)
        return acf_mesh(grid, M=M, H=H)
    if route == "exact":
        return acf_exact(grid, H=H, K=max(K, H))
    raise ValueError(f"unknown acf route {route!r}")


def _covariance_for(sample, grid, route, mesh_order, K):
    H = max(sample.n_rows, sample.n_cols) - 1
    acf = model_acf(grid, H, route=route, mesh_order=mesh_order, K=K)
    return assemble(acf, sample.n_rows, sample.n_cols)


def gaussian_loglik(
    sample,
    grid,
    beta=None,
    *,
    route="mesh",
    mesh_order=DEFAULT_MESH_ORDER,
    K=DEFAULT_TRUNCATION,
):
    """Exact Gaussian log likelihood, up to the constant -n/2*log(2*pi).

    Computes -0.5*logdet(Sigma) - 0.5*(Y - X beta)' Sigma^-1 (Y - X beta)
    with Sigma assembled from the model acf.
    """
    beta = _conform_beta(beta, sample.design.shape[1])
    resid = sample.vector() - (sample.design @ beta if beta.size else 0.0)
    cov = _covariance_for(sample, grid, route, mesh_order, K)
    return gaussian_core(cov.sigma, resid)


def whittle_exact(
    sacf,
    grid,
    *,
    use_biased=False,
    route="mesh",
    mesh_order=DEFAULT_MESH_ORDER,
    K=DEFAULT_TRUNCATION,
):
    """Lag-domain Whittle discrepancy via the reciprocal-spectrum shortcut.

    Theta[0, 0] plus the sum over all observed lags of the sample acf times
    the acf of the negated-coefficient model.  The unbiased sample acf is
    the right default; the biased variant is kept only to demonstrate the
    bias it induces.
    """
    H = max(sacf.n_rows, sacf.n_cols) - 1
    gneg = model_acf(grid.negate(), H, route=route, mesh_order=mesh_order, K=K)
    window = gneg.window(sacf.n_rows - 1, sacf.n_cols - 1)
    ghat = sacf.biased if use_biased else sacf.unbiased
    return float(grid.value_at(0, 0) + np.sum(ghat * window))


def whittle_approx(sacf, grid, mesh_order=None):
    """Frequency-domain Whittle discrepancy on an explicit mesh.

    Plain average of log F + I_hat/F over the full order-M mesh, boundary
    lines included with unit weight and the sum divided by the actual point
    count (2M+1)^2.  Because the two boundary lines duplicate one frequency,
    this average approaches `whittle_exact` at rate O(1/M); the mesh order
    defaults to max(n_rows, n_cols).
    """
    if mesh_order is None:
        mesh_order = max(sacf.n_rows, sacf.n_cols)
    logF = log_spectrum_on_mesh(grid, mesh_order)
    pgram = periodogram_ft(sacf, mesh_order)
    return float(np.mean(logF + pgram * np.exp(-logF)))


def gls_beta(
    sample,
    grid,
    mode="mle",
    *,
    route="mesh",
    mesh_order=DEFAULT_MESH_ORDER,
    K=DEFAULT_TRUNCATION,
):
    """Generalized least squares update of the regression vector.

    mode "mle" weighs by the inverse model covariance Sigma(F)^-1; mode
    "qmle" weighs by the covariance of the reciprocal spectrum Sigma(1/F),
    the weighting under which the Whittle quadratic form is minimized.
    """
    X = sample.design
    if X.shape[1] == 0:
        return np.empty(0)
    Y = sample.vector()
    if mode == "mle":
        cov = _covariance_for(sample, grid, route, mesh_order, K)
        fac = factor(cov)
        Xw = whiten(fac, X)
        Yw = whiten(fac, Y)
        return np.linalg.solve(Xw.T @ Xw, Xw.T @ Yw)
    if mode == "qmle":
        cov = _covariance_for(sample, grid.negate(), route, mesh_order, K)
        XtA = X.T @ cov.sigma
        return np.linalg.solve(XtA @ X, XtA @ Y)
    raise ValueError(f"unknown gls mode {mode!r}")


def kl_divergence(grid_a, grid_b, mesh_order=DEFAULT_MESH_ORDER):
    """Spectral discrepancy <log F_A + F_B / F_A> by mesh quadrature.

    Trapezoid weights over the order-M mesh make the quadrature exact for
    band-limited integrands, so the self-discrepancy equals
    Theta_A[0, 0] + 1 to rounding.
    """
    M = mesh_order
    if M < max(grid_a.p, grid_b.p, 1):
        raise ValueError("mesh order too small for the grid orders")
    logFa = log_spectrum_on_mesh(grid_a, M)
    Fb = spectrum_on_mesh(grid_b, M).values
    w = np.ones(2 * M + 1)
    w[0] = w[-1] = 0.5
    W = np.outer(w, w)
    integrand = logFa + Fb * np.exp(-logFa)
    return float(np.sum(W * integrand) / (2 * M) ** 2)


def evaluate_objective(sample, grid, beta, kind, **kwargs):
    """Uniform entry point returning an ObjectiveValue record."""
    beta = _conform_beta(beta, sample.design.shape[1])
    if kind == "gaussian":
        value = gaussian_loglik(sample, grid, beta, **kwargs)
    elif kind == "whittle_exact":
        value = whittle_exact(sample_acf(sample, beta), grid, **kwargs)
    elif kind == "whittle_approx":
        value = whittle_approx(sample_acf(sample, beta), grid, **kwargs)
    else:
        raise ValueError(f"unknown objective kind {kind!r}")
    return ObjectiveValue(value=value, kind=kind, grid=grid, beta=beta)
