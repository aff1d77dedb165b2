"""Model comparison criteria and spatial autocorrelation diagnostics."""

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .covariance import assemble, factor, whiten
from .objectives import model_acf


@dataclass(frozen=True)
class InfoCriteria:
    aic: float
    bic: float
    hq: float
    k: int
    n: int
    neg_loglik: float


def info_criteria(fit_result):
    """AIC, BIC, and Hannan-Quinn for a maximum-likelihood fit.

    k counts free cepstral coefficients plus regression coefficients; n is
    the number of lattice sites.  All three use the -log L from the fit, so
    they are comparable across orders and masks on the same data.
    """
    if fit_result.method != "mle":
        raise ValueError("information criteria require a maximum-likelihood fit")
    k = fit_result.grid.free_count + len(fit_result.beta)
    n = fit_result.n_rows * fit_result.n_cols
    neg = -fit_result.loglik
    return InfoCriteria(
        aic=2.0 * k + 2.0 * neg,
        bic=k * np.log(n) + 2.0 * neg,
        hq=2.0 * k * np.log(np.log(n)) + 2.0 * neg,
        k=k,
        n=n,
        neg_loglik=neg,
    )


@dataclass(frozen=True)
class MoranResult:
    statistic: float
    expected: float
    variance: float
    zscore: float
    pvalue: float
    p_permutation: float = None


def morans_i(values, permutations=0, seed=None):
    """Moran's I on a lattice with binary rook (4-neighbor) weights.

    Returns the statistic, its moments under the normality null, the
    z-score, and the two-sided p-value.  With ``permutations`` > 0 a
    permutation p-value (two-sided, distance from the null expectation) is
    computed as well.  Constant input has no spatial structure to test and
    raises.
    """
    z = np.asarray(values, dtype=float)
    if z.ndim != 2:
        raise ValueError("values must be a 2-D lattice")
    nr, nc = z.shape
    n = z.size
    if n < 3:
        raise ValueError("need at least 3 sites")
    z = z - z.mean()
    if np.sum(z * z) == 0.0:
        raise ValueError("constant lattice: Moran's I is undefined")

    s0 = 2.0 * (nr * (nc - 1) + nc * (nr - 1))

    def stat(zz):
        num = 2.0 * (np.sum(zz[:, :-1] * zz[:, 1:]) + np.sum(zz[:-1, :] * zz[1:, :]))
        return (n / s0) * num / np.sum(zz * zz)

    I = stat(z)
    expected = -1.0 / (n - 1)
    # normality-null moments, binary symmetric weights
    s1 = 2.0 * s0
    deg = np.full((nr, nc), 4.0)
    deg[0, :] -= 1
    deg[-1, :] -= 1
    deg[:, 0] -= 1
    deg[:, -1] -= 1
    s2 = 4.0 * float(np.sum(deg**2))
    variance = (n**2 * s1 - n * s2 + 3.0 * s0**2) / ((n**2 - 1.0) * s0**2) - expected**2
    zscore = (I - expected) / np.sqrt(variance)
    pvalue = 2.0 * float(norm.sf(abs(zscore)))

    p_perm = None
    if permutations > 0:
        rng = np.random.default_rng(seed)
        flat = z.ravel()
        ref = abs(I - expected)
        hits = 0
        for _ in range(permutations):
            perm = rng.permutation(flat).reshape(nr, nc)
            if abs(stat(perm) - expected) >= ref:
                hits += 1
        p_perm = (hits + 1.0) / (permutations + 1.0)
    return MoranResult(
        statistic=float(I),
        expected=float(expected),
        variance=float(variance),
        zscore=float(zscore),
        pvalue=min(1.0, pvalue),
        p_permutation=p_perm,
    )


def residuals(fit_result, sample):
    """Whitened residual lattice of a fit, with its Moran diagnostic.

    Subtracts the fitted mean surface, solves the lower Cholesky factor of
    the fitted covariance against the residual vector, and reshapes back to
    the lattice.  If the model is right these are white noise, and Moran's
    I on them should be unremarkable.
    """
    cfg = fit_result.config
    acf = model_acf(
        fit_result.grid,
        max(sample.n_rows, sample.n_cols) - 1,
        route=cfg.get("route", "mesh"),
        mesh_order=cfg.get("mesh_order", 200),
        K=cfg.get("truncation", 25),
    )
    cov = assemble(acf, sample.n_rows, sample.n_cols)
    fac = factor(cov)
    resid = sample.vector() - sample.mean_surface(fit_result.beta).ravel()
    white = whiten(fac, resid).reshape(sample.n_rows, sample.n_cols)
    return white, morans_i(white)
