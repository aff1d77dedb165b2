"""Information criteria and Moran's I against dense-matrix oracles."""

import numpy as np
import pytest

from cepsfield.covariance import assemble, simulate
from cepsfield.diagnostics import info_criteria, morans_i, residuals
from cepsfield.estimation import FitConfig, FitResult, fit
from cepsfield.lattice import LatticeSample
from cepsfield.model import CepstralGrid
from cepsfield.objectives import model_acf


def rook_weights(n_rows, n_cols):
    """Dense binary 4-neighbor weight matrix, sites in row-major order."""
    n = n_rows * n_cols
    W = np.zeros((n, n))
    for r in range(n_rows):
        for c in range(n_cols):
            i = r * n_cols + c
            for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                if 0 <= rr < n_rows and 0 <= cc < n_cols:
                    W[i, rr * n_cols + cc] = 1.0
    return W


def moran_oracle(values):
    """Moran's I and its normality-null moments from the dense weights."""
    z = np.asarray(values, dtype=float)
    n = z.size
    W = rook_weights(*z.shape)
    x = z.ravel() - z.mean()
    s0 = W.sum()
    I = (n / s0) * (x @ W @ x) / (x @ x)
    e = -1.0 / (n - 1)
    s1 = 0.5 * np.sum((W + W.T) ** 2)
    s2 = np.sum((W.sum(axis=0) + W.sum(axis=1)) ** 2)
    var = (n**2 * s1 - n * s2 + 3.0 * s0**2) / ((n**2 - 1.0) * s0**2) - e**2
    return I, e, var


def fit_result_stub(method, loglik, grid=None, n_beta=2, n_rows=8, n_cols=8):
    return FitResult(
        method=method,
        grid=grid if grid is not None else CepstralGrid.zeros(1),
        beta=np.zeros(n_beta),
        design_names=tuple(f"b{i}" for i in range(n_beta)),
        loglik=loglik,
        objective_value=-loglik,
        converged=True,
        n_outer=1,
        grad_inf=0.0,
        trace=(-loglik,),
        n_rows=n_rows,
        n_cols=n_cols,
        data_digest="0" * 12,
        config={},
    )


def test_info_criteria_arithmetic():
    res = fit_result_stub("mle", loglik=-50.0)
    ic = info_criteria(res)
    assert ic.k == 7
    assert ic.n == 64
    assert ic.neg_loglik == pytest.approx(50.0)
    assert ic.aic == pytest.approx(2 * 7 + 100.0)
    assert ic.bic == pytest.approx(7 * np.log(64) + 100.0)
    assert ic.hq == pytest.approx(2 * 7 * np.log(np.log(64)) + 100.0)


def test_info_criteria_rejects_non_mle():
    res = fit_result_stub("qmle_exact", loglik=-50.0)
    with pytest.raises(ValueError, match="maximum-likelihood"):
        info_criteria(res)


@pytest.mark.parametrize("shape", [(4, 5), (6, 3), (7, 7)])
def test_moran_matches_dense_oracle(shape, rng):
    values = rng.standard_normal(shape)
    got = morans_i(values)
    I, e, var = moran_oracle(values)
    assert got.statistic == pytest.approx(I, abs=1e-12)
    assert got.expected == pytest.approx(e, abs=1e-12)
    assert got.variance == pytest.approx(var, rel=1e-12)
    z = (I - e) / np.sqrt(var)
    assert got.zscore == pytest.approx(z, rel=1e-12)


def test_moran_checkerboard_is_minus_one():
    board = np.indices((6, 6)).sum(axis=0) % 2 * 2.0 - 1.0
    got = morans_i(board)
    assert got.statistic == pytest.approx(-1.0, abs=1e-12)
    assert got.pvalue < 1e-10


def test_moran_smooth_surface_is_positive():
    surface = np.add.outer(np.arange(8.0), np.arange(8.0))
    got = morans_i(surface)
    assert got.statistic > 0.5
    assert got.pvalue < 1e-10


def test_moran_rejects_degenerate_input():
    with pytest.raises(ValueError, match="2-D"):
        morans_i(np.arange(6.0))
    with pytest.raises(ValueError, match="constant"):
        morans_i(np.ones((4, 4)))
    with pytest.raises(ValueError, match="3 sites"):
        morans_i(np.array([[1.0, 2.0]]))


def test_moran_permutation_pvalue(rng):
    correlated = np.add.outer(np.arange(7.0), np.arange(7.0))
    correlated = correlated + 0.1 * rng.standard_normal(correlated.shape)
    got = morans_i(correlated, permutations=199, seed=4)
    again = morans_i(correlated, permutations=199, seed=4)
    assert got.p_permutation == again.p_permutation
    assert got.p_permutation <= 0.01
    noise = rng.standard_normal((7, 7))
    base = morans_i(noise)
    perm = morans_i(noise, permutations=199, seed=4)
    assert base.p_permutation is None
    assert perm.p_permutation > 0.05


def test_residuals_of_true_model_are_white():
    grid = CepstralGrid.from_free_params(1, [0.3, 0.1, 0.2, 0.25, -0.05])
    cov = assemble(model_acf(grid, 11), 12, 12)
    values = simulate(cov, seed=29).reshape(12, 12)
    sample = LatticeSample.from_values(values, design_spec="none")
    truth = fit_result_stub("mle", loglik=0.0, grid=grid, n_beta=0, n_rows=12, n_cols=12)
    white, moran = residuals(truth, sample)
    assert white.shape == (12, 12)
    assert abs(white.mean()) < 0.3
    assert 0.7 < white.var() < 1.3
    assert moran.pvalue > 0.01
    # the raw field is visibly smoother than its whitened residuals
    assert morans_i(values).statistic > moran.statistic


def test_residuals_after_fit():
    grid = CepstralGrid.from_free_params(1, [0.3, 0.1, 0.2, 0.25, -0.05])
    cov = assemble(model_acf(grid, 11), 12, 12)
    values = simulate(cov, seed=31).reshape(12, 12)
    sample = LatticeSample.from_values(values, design_spec="constant")
    res = fit(sample, 1, method="qmle_exact", config=FitConfig(max_outer=3))
    white, moran = residuals(res, sample)
    assert white.shape == (12, 12)
    assert moran.pvalue > 0.01
