"""Fitting cepstral models: alternating optimization, errors, MCMC, tests.

`fit` alternates a quasi-Newton step over the free cepstral coefficients
with the matching generalized-least-squares update of the regression
vector, until the joint parameter change falls below the outer tolerance.
Gradients are central finite differences with a fixed relative step, so
runs are reproducible bit for bit.  `standard_errors` inverts an observed
Hessian of the minimized objective over coefficients and regression
jointly; for Whittle objectives the Hessian is scaled by n/2 first, which
makes it comparable to a negated log likelihood.  `mcmc_fit` runs a
random-walk Metropolis sampler against the exact likelihood with
independent normal priors.
"""

import hashlib
import json
import warnings
from dataclasses import dataclass, asdict

import numpy as np
from scipy.optimize import minimize
from scipy.stats import chi2

from .lattice import sample_acf
from .model import CepstralGrid, DEFAULT_TRUNCATION
from .objectives import (
    DEFAULT_MESH_ORDER,
    gaussian_loglik,
    gls_beta,
    whittle_approx,
    whittle_exact,
)

FIT_METHODS = ("mle", "qmle_exact", "qmle_approx")


@dataclass
class FitConfig:
    """Numeric knobs for `fit`; the defaults suit lattices up to ~50x50.

    The optimizer targets a gradient max-norm of ``grad_tol``; the converged
    flag additionally requires the final central-difference gradient to be
    below ``grad_check_tol``, a looser bound that allows for the rounding
    noise a dense factorization feeds into finite differences.
    """

    route: str = "mesh"
    mesh_order: int = DEFAULT_MESH_ORDER
    truncation: int = DEFAULT_TRUNCATION
    approx_mesh_order: int = None
    outer_tol: float = 1e-7
    grad_tol: float = 1e-6
    fd_rel_step: float = 1e-5
    grad_check_tol: float = 1e-4
    max_outer: int = 60
    max_inner: int = 300

    def acf_kwargs(self):
        return dict(route=self.route, mesh_order=self.mesh_order, K=self.truncation)


@dataclass
class FitResult:
    method: str
    grid: CepstralGrid
    beta: np.ndarray
    design_names: tuple
    loglik: float
    objective_value: float
    converged: bool
    n_outer: int
    grad_inf: float
    trace: tuple
    n_rows: int
    n_cols: int
    data_digest: str
    config: dict
    se_theta: np.ndarray = None
    se_beta: np.ndarray = None
    draws: np.ndarray = None
    acceptance_rate: float = None

    @property
    def theta(self):
        return self.grid.free_params()

    def param_names(self):
        names = [f"theta({j},{k})" for j, k in self.grid.free_indices()]
        names.extend(self.design_names)
        return names

    def param_values(self):
        return np.concatenate([self.theta.values, self.beta])

    # -- serialization --------------------------------------------------

    def report_text(self):
        lines = [
            f"method: {self.method}",
            f"lattice: {self.n_rows} x {self.n_cols}",
            f"order_p: {self.grid.p}",
            f"free_coefficients: {self.grid.free_count}",
            f"design: {', '.join(self.design_names) if self.design_names else 'none'}",
            f"converged: {self.converged}",
            f"outer_iterations: {self.n_outer}",
            f"neg_loglik: {-self.loglik:.6f}",
            f"objective: {self.objective_value:.6f}"
            if self.objective_value is not None
            else "objective: n/a",
        ]
        if self.acceptance_rate is not None:
            lines.append(f"acceptance_rate: {self.acceptance_rate:.3f}")
        ses = self._se_vector()
        lines.append("parameters:")
        for i, (name, value) in enumerate(zip(self.param_names(), self.param_values())):
            if ses is not None:
                lines.append(f"  {name:<14} {value: .6f}   se {ses[i]:.6f}")
            else:
                lines.append(f"  {name:<14} {value: .6f}")
        return "\n".join(lines) + "\n"

    def _se_vector(self):
        if self.se_theta is None or self.se_beta is None:
            return None
        return np.concatenate([self.se_theta, self.se_beta])

    def to_dict(self):
        out = {
            "method": self.method,
            "p": self.grid.p,
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "design_names": list(self.design_names),
            "theta_matrix": self.grid.to_matrix().tolist(),
            "mask_free_indices": [list(jk) for jk in self.grid.free_indices()],
            "theta_free": self.theta.values.tolist(),
            "beta": self.beta.tolist(),
            "loglik": self.loglik,
            "objective_value": self.objective_value,
            "converged": bool(self.converged),
            "n_outer": self.n_outer,
            "grad_inf": self.grad_inf,
            "data_digest": self.data_digest,
            "config": self.config,
        }
        if self.se_theta is not None:
            out["se_theta"] = np.asarray(self.se_theta).tolist()
        if self.se_beta is not None:
            out["se_beta"] = np.asarray(self.se_beta).tolist()
        if self.acceptance_rate is not None:
            out["acceptance_rate"] = self.acceptance_rate
        return out

    def save_report(self, path):
        with open(path, "w") as fh:
            fh.write(self.report_text())

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def save_draws(self, path):
        if self.draws is None:
            raise ValueError("no posterior draws; only Bayesian fits carry them")
        # names such as theta(0,1) contain commas, so they must be quoted
        header = ",".join(f'"{name}"' for name in self.param_names())
        np.savetxt(path, self.draws, delimiter=",", header=header, comments="", fmt="%.8g")


def data_digest(sample):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(sample.values).tobytes())
    h.update(str(sample.values.shape).encode())
    h.update(np.ascontiguousarray(sample.design).tobytes())
    return h.hexdigest()[:12]


def _guarded(f):
    """Score numerically infeasible coefficient vectors as +inf.

    Line searches can step far enough out that the spectrum under- or
    overflows or the implied covariance loses definiteness; the acf and
    covariance validators then raise.  Those points are infeasible rather
    than erroneous, so the optimizer should back off, not crash.
    """

    def g(x):
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                val = f(x)
            except (ValueError, np.linalg.LinAlgError):
                return np.inf
        return val if np.isfinite(val) else np.inf

    return g


def _central_gradient(f, x, rel_step):
    g = np.empty_like(x)
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def _central_hessian(f, x, rel_step):
    d = x.size
    h = rel_step * np.maximum(1.0, np.abs(x))
    f0 = f(x)
    H = np.empty((d, d))
    for i in range(d):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        H[i, i] = (f(xp) - 2.0 * f0 + f(xm)) / h[i] ** 2
    for i in range(d):
        for j in range(i + 1, d):
            zpp = x.copy()
            zpm = x.copy()
            zmp = x.copy()
            zmm = x.copy()
            zpp[i] += h[i]
            zpp[j] += h[j]
            zpm[i] += h[i]
            zpm[j] -= h[j]
            zmp[i] -= h[i]
            zmp[j] += h[j]
            zmm[i] -= h[i]
            zmm[j] -= h[j]
            H[i, j] = H[j, i] = (f(zpp) - f(zpm) - f(zmp) + f(zmm)) / (4.0 * h[i] * h[j])
    return H


def _resolve_mask(p, mask):
    side = 2 * p + 1
    if mask is None:
        return np.zeros((side, side), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (side, side):
        raise ValueError(f"mask must have shape ({side}, {side})")
    return mask


def fit(
    sample,
    p,
    mask=None,
    method="mle",
    config=None,
    init_theta=None,
    init_beta=None,
):
    """Fit a cepstral model of order p to a lattice sample.

    method "mle" minimizes the negated exact Gaussian log likelihood;
    "qmle_exact" and "qmle_approx" minimize the lag-domain and mesh Whittle
    discrepancies.  Coefficients start at zero (white noise) and the
    regression vector at ordinary least squares unless initial values are
    given.  Returns a FitResult; a fit that exhausts the outer iterations
    or ends with a noticeably nonzero gradient has ``converged=False`` but
    still carries the best iterate found.
    """
    if method not in FIT_METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {FIT_METHODS}")
    config = config if config is not None else FitConfig()
    mask_arr = _resolve_mask(p, mask)
    base = CepstralGrid.zeros(p, mask=mask_arr)
    free_idx = base.free_indices()
    d = len(free_idx)
    L = sample.design.shape[1]
    acf_kw = config.acf_kwargs()

    def make_grid(x):
        return CepstralGrid.from_free_params(p, x, mask=mask_arr)

    x = np.zeros(d) if init_theta is None else np.array(init_theta, dtype=float)
    if x.shape != (d,):
        raise ValueError(f"init_theta must have length {d}")
    beta = sample.ols_beta() if init_beta is None else np.array(init_beta, dtype=float)

    def theta_objective(beta_now):
        if method == "mle":
            def f(x_):
                return -gaussian_loglik(sample, make_grid(x_), beta_now, **acf_kw)
        else:
            sacf = sample_acf(sample, beta_now)
            if method == "qmle_exact":
                def f(x_):
                    return whittle_exact(sacf, make_grid(x_), **acf_kw)
            else:
                def f(x_):
                    return whittle_approx(sacf, make_grid(x_), config.approx_mesh_order)
        return f

    trace = []
    converged_outer = False
    n_outer = 0
    for n_outer in range(1, config.max_outer + 1):
        fobj = theta_objective(beta)
        if n_outer == 1:
            fobj(x)  # unguarded probe so setup errors raise with their own message
        fobj = _guarded(fobj)
        res = minimize(
            fobj,
            x,
            jac=lambda z: _central_gradient(fobj, z, config.fd_rel_step),
            method="BFGS",
            options={"gtol": config.grad_tol, "maxiter": config.max_inner},
        )
        x_new = res.x
        if L:
            beta_new = gls_beta(
                sample,
                make_grid(x_new),
                mode="mle" if method == "mle" else "qmle",
                **acf_kw,
            )
            delta = max(
                np.max(np.abs(x_new - x), initial=0.0),
                np.max(np.abs(beta_new - beta), initial=0.0),
            )
        else:
            beta_new = beta
            delta = np.max(np.abs(x_new - x), initial=0.0)
        x, beta = x_new, beta_new
        trace.append(float(_guarded(theta_objective(beta))(x)))
        if delta < config.outer_tol:
            converged_outer = True
            break

    final_obj = _guarded(theta_objective(beta))
    grad_inf = float(np.max(np.abs(_central_gradient(final_obj, x, config.fd_rel_step))))
    converged = converged_outer and grad_inf < config.grad_check_tol
    grid = make_grid(x)
    # the exact likelihood is reported for every method; at a Whittle solution
    # on a degenerate sample it may be unevaluable, which reports as nan
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            loglik = float(gaussian_loglik(sample, grid, beta, **acf_kw))
        except (ValueError, np.linalg.LinAlgError):
            loglik = float("nan")
    return FitResult(
        method=method,
        grid=grid,
        beta=beta,
        design_names=sample.design_names,
        loglik=float(loglik),
        objective_value=trace[-1],
        converged=bool(converged),
        n_outer=n_outer,
        grad_inf=grad_inf,
        trace=tuple(trace),
        n_rows=sample.n_rows,
        n_cols=sample.n_cols,
        data_digest=data_digest(sample),
        config={"method": method, **asdict(config)},
    )


def _joint_objective(fit_result, sample, config):
    """Objective over (theta, beta) jointly, on the likelihood scale."""
    p = fit_result.grid.p
    mask_arr = np.asarray(fit_result.grid.mask)
    d = fit_result.grid.free_count
    acf_kw = config.acf_kwargs()
    n = sample.n
    method = fit_result.method

    def f(z):
        grid = CepstralGrid.from_free_params(p, z[:d], mask=mask_arr)
        beta = z[d:]
        if method == "mle":
            return -gaussian_loglik(sample, grid, beta, **acf_kw)
        sacf = sample_acf(sample, beta)
        if method == "qmle_exact":
            value = whittle_exact(sacf, grid, **acf_kw)
        elif method == "qmle_approx":
            value = whittle_approx(sacf, grid, config.approx_mesh_order)
        else:
            raise ValueError(f"no joint objective for method {method!r}")
        return 0.5 * n * value

    return f


def standard_errors(fit_result, sample, rel_step=1e-3, config=None):
    """Standard errors from the inverse observed Hessian of the fit objective.

    The Hessian is taken over free coefficients and regression coefficients
    jointly at the fitted values, by central second differences.  Whittle
    objectives are scaled by n/2 so their curvature matches the likelihood
    scale.  For Bayesian fits the posterior draw standard deviations are
    returned instead.  Fills ``se_theta``/``se_beta`` on the result and
    returns the concatenated vector.
    """
    d = fit_result.grid.free_count
    if fit_result.method == "bayes":
        if fit_result.draws is None:
            raise ValueError("Bayesian fit carries no draws")
        ses = fit_result.draws.std(axis=0, ddof=1)
    else:
        config = config if config is not None else FitConfig(
            **{k: v for k, v in fit_result.config.items() if k != "method"}
        )
        z0 = fit_result.param_values()
        H = _central_hessian(_joint_objective(fit_result, sample, config), z0, rel_step)
        H = 0.5 * (H + H.T)
        try:
            cov = np.linalg.inv(H)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                "observed Hessian is singular; the fit likely did not converge"
            ) from exc
        diag = np.diag(cov)
        if np.any(diag <= 0):
            warnings.warn(
                "observed Hessian is not positive definite; some standard errors are NaN",
                stacklevel=2,
            )
        ses = np.sqrt(np.where(diag > 0, diag, np.nan))
    fit_result.se_theta = ses[:d]
    fit_result.se_beta = ses[d:]
    return ses


@dataclass
class McmcConfig:
    """Random-walk Metropolis settings for `mcmc_fit`."""

    n_iter: int = 20000
    burn_in: int = None
    thin: int = 1
    proposal_scale: float = 0.05
    prior_sd: float = 10.0
    seed: int = 0
    route: str = "mesh"
    mesh_order: int = 96
    truncation: int = DEFAULT_TRUNCATION


def mcmc_fit(sample, p, mask=None, config=None):
    """Bayesian fit by random-walk Metropolis against the exact likelihood.

    Independent N(0, prior_sd^2) priors on every free coefficient and every
    regression coefficient; isotropic normal proposals of standard
    deviation ``proposal_scale``.  Draws after burn-in (default one fifth
    of the chain) are retained, optionally thinned.  The returned FitResult
    has method "bayes" with posterior means as the point estimates, the
    draw matrix attached, and posterior standard deviations in the se
    fields.  A run is reproducible bit for bit from its seed.  Warns when
    the acceptance rate leaves [0.05, 0.6].
    """
    config = config if config is not None else McmcConfig()
    mask_arr = _resolve_mask(p, mask)
    base = CepstralGrid.zeros(p, mask=mask_arr)
    d = base.free_count
    L = sample.design.shape[1]
    acf_kw = dict(route=config.route, mesh_order=config.mesh_order, K=config.truncation)
    burn_in = config.burn_in if config.burn_in is not None else config.n_iter // 5

    def log_post(z):
        grid = CepstralGrid.from_free_params(p, z[:d], mask=mask_arr)
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                ll = gaussian_loglik(sample, grid, z[d:], **acf_kw)
            except (ValueError, np.linalg.LinAlgError):
                return -np.inf
        if not np.isfinite(ll):
            return -np.inf
        return ll - 0.5 * float(z @ z) / config.prior_sd**2

    if burn_in >= config.n_iter:
        raise ValueError("burn_in must be smaller than n_iter")
    rng = np.random.default_rng(config.seed)
    z = np.concatenate([np.zeros(d), sample.ols_beta()])
    lp = log_post(z)
    kept = []
    accepted = 0
    for it in range(config.n_iter):
        prop = z + config.proposal_scale * rng.standard_normal(z.size)
        lp_prop = log_post(prop)
        if np.log(rng.random()) < lp_prop - lp:
            z, lp = prop, lp_prop
            accepted += 1
        if it >= burn_in and (it - burn_in) % config.thin == 0:
            kept.append(z.copy())
    rate = accepted / config.n_iter
    if not 0.05 <= rate <= 0.6:
        warnings.warn(
            f"Metropolis acceptance rate {rate:.3f} outside [0.05, 0.6]; "
            "retune proposal_scale",
            stacklevel=2,
        )
    draws = np.array(kept)
    post_mean = draws.mean(axis=0)
    grid = CepstralGrid.from_free_params(p, post_mean[:d], mask=mask_arr)
    beta = post_mean[d:]
    result = FitResult(
        method="bayes",
        grid=grid,
        beta=beta,
        design_names=sample.design_names,
        loglik=float(gaussian_loglik(sample, grid, beta, **acf_kw)),
        objective_value=float(-log_post(post_mean)),
        converged=bool(0.05 <= rate <= 0.6),
        n_outer=config.n_iter,
        grad_inf=float("nan"),
        trace=(),
        n_rows=sample.n_rows,
        n_cols=sample.n_cols,
        data_digest=data_digest(sample),
        config=asdict(config),
    )
    result.draws = draws
    result.acceptance_rate = rate
    result.se_theta = draws.std(axis=0, ddof=1)[:d]
    result.se_beta = draws.std(axis=0, ddof=1)[d:]
    return result


@dataclass(frozen=True)
class LrTestResult:
    statistic: float
    dof: int
    pvalue: float
    loglik_full: float
    loglik_nested: float


def lr_test(fit_full, fit_nested):
    """Likelihood-ratio test of a nested coefficient mask against a fuller one.

    Both fits must be maximum likelihood on the same data with the same
    design, and the nested model's free coefficient set must be a strict
    subset of the full model's.
    """
    for f in (fit_full, fit_nested):
        if f.method != "mle":
            raise ValueError("likelihood-ratio tests require maximum-likelihood fits")
    if fit_full.data_digest != fit_nested.data_digest:
        raise ValueError("fits are not on the same data")
    if fit_full.design_names != fit_nested.design_names:
        raise ValueError("fits use different regression designs")
    free_full = set(fit_full.grid.free_indices())
    free_nested = set(fit_nested.grid.free_indices())
    if not free_nested < free_full:
        raise ValueError("models are not strictly nested")
    dof = len(free_full) - len(free_nested)
    stat = 2.0 * (fit_full.loglik - fit_nested.loglik)
    if stat < 0:
        if stat > -1e-6:
            stat = 0.0
        else:
            warnings.warn(
                f"nested fit beats the full fit by {-stat / 2:.3e} log-likelihood "
                "units; check convergence",
                stacklevel=2,
            )
            stat = 0.0
    return LrTestResult(
        statistic=float(stat),
        dof=dof,
        pvalue=float(chi2.sf(stat, dof)),
        loglik_full=fit_full.loglik,
        loglik_nested=fit_nested.loglik,
    )


def refine_by_deletion(fit_result, sample, threshold=2.0, max_rounds=10, config=None):
    """Backward deletion: mask coefficients with |estimate| < threshold * se, refit.

    Rounds continue until no further coefficient falls below the threshold.
    The origin coefficient (the spectral scale) is never deleted.  Refits
    warm-start from the surviving estimates.
    """
    config = config if config is not None else FitConfig()
    current = fit_result
    for _ in range(max_rounds):
        if current.se_theta is None:
            standard_errors(current, sample, config=config)
        p = current.grid.p
        free_idx = current.grid.free_indices()
        values = current.theta.values
        ses = current.se_theta
        drop = [
            (j, k)
            for (j, k), v, s in zip(free_idx, values, ses)
            if (j, k) != (0, 0) and np.isfinite(s) and abs(v) < threshold * s
        ]
        if not drop:
            return current
        mask = np.array(current.grid.mask)
        for j, k in drop:
            mask[j + p, k + p] = True
            mask[-j + p, -k + p] = True
        keep_values = [
            v for (jk, v) in zip(free_idx, values) if jk not in drop
        ]
        current = fit(
            sample,
            p,
            mask=mask,
            method=current.method,
            config=config,
            init_theta=np.array(keep_values),
            init_beta=current.beta,
        )
    warnings.warn("backward deletion did not settle within max_rounds", stacklevel=2)
    return current
