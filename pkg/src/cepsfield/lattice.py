"""Lattice samples: loading, vectorization, sample acf, periodogram.

Sites are vectorized row by row, so site (r, s) of an n_rows x n_cols grid
(1-based indices) lands at vector position n_cols*(r-1) + s.  Regression
surfaces are described by a design matrix over the vectorized sites; the
built-in designs are "none", "constant", and "constant+rowcol" (intercept
plus the raw 1-based row and column indices, in that order).
"""

from dataclasses import dataclass

import numpy as np
from scipy import signal

DESIGN_SPECS = ("none", "constant", "constant+rowcol")


class LatticeLoadError(ValueError):
    """Raised when a lattice CSV cannot be parsed; messages carry positions."""


def build_design(n_rows, n_cols, design_spec):
    """Design matrix and column names for one of the built-in mean surfaces."""
    n = n_rows * n_cols
    if design_spec == "none":
        return np.empty((n, 0)), ()
    rr, cc = np.meshgrid(
        np.arange(1, n_rows + 1), np.arange(1, n_cols + 1), indexing="ij"
    )
    if design_spec == "constant":
        return np.ones((n, 1)), ("const",)
    if design_spec == "constant+rowcol":
        X = np.column_stack([np.ones(n), rr.ravel(), cc.ravel()])
        return X, ("const", "row", "col")
    raise ValueError(f"unknown design spec {design_spec!r}; expected one of {DESIGN_SPECS}")


@dataclass(frozen=True)
class LatticeSample:
    """Observed lattice with its regression design.

    values : (n_rows, n_cols) float array, all finite.
    design : (n, L) float array over vectorized sites, full column rank.
    """

    values: np.ndarray
    design: np.ndarray
    design_names: tuple = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or min(values.shape) < 1:
            raise ValueError("values must be a 2-D array")
        if not np.all(np.isfinite(values)):
            raise ValueError("lattice values must be finite")
        n = values.size
        design = np.asarray(self.design, dtype=float)
        if design.ndim != 2 or design.shape[0] != n:
            raise ValueError(f"design must have shape ({n}, L), got {design.shape}")
        L = design.shape[1]
        if L > 0 and np.linalg.matrix_rank(design) < L:
            raise ValueError("design matrix is rank deficient")
        names = tuple(self.design_names)
        if names and len(names) != L:
            raise ValueError("design_names length disagrees with design columns")
        object.__setattr__(self, "values", _ro(values))
        object.__setattr__(self, "design", _ro(design))
        object.__setattr__(self, "design_names", names)

    @classmethod
    def from_values(cls, values, design_spec="none"):
        values = np.asarray(values, dtype=float)
        X, names = build_design(values.shape[0], values.shape[1], design_spec)
        return cls(values=values, design=X, design_names=names)

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def n_cols(self):
        return self.values.shape[1]

    @property
    def n(self):
        return self.values.size

    def vector(self):
        """Row-major vectorization; site (r, s) at position n_cols*(r-1) + s."""
        return self.values.ravel()

    def mean_surface(self, beta):
        beta = _conform_beta(beta, self.design.shape[1])
        if beta.size == 0:
            return np.zeros_like(self.values)
        return (self.design @ beta).reshape(self.values.shape)

    def ols_beta(self):
        if self.design.shape[1] == 0:
            return np.empty(0)
        coef, *_ = np.linalg.lstsq(self.design, self.vector(), rcond=None)
        return coef


def devectorize(vec, n_rows, n_cols):
    vec = np.asarray(vec)
    if vec.size != n_rows * n_cols:
        raise ValueError("vector length disagrees with the lattice shape")
    return vec.reshape(n_rows, n_cols)


def _ro(arr):
    out = np.array(arr, copy=True)
    out.flags.writeable = False
    return out


def _conform_beta(beta, L):
    if beta is None:
        beta = np.empty(0)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if beta.shape != (L,):
        raise ValueError(f"beta must have length {L}, got {beta.shape}")
    return beta


@dataclass(frozen=True)
class SampleAcf:
    """Sample autocovariances of a de-meaned lattice, all lags |h| < n_rows, |k| < n_cols.

    ``biased[h + n_rows - 1, k + n_cols - 1]`` divides the lagged cross-sum by
    the site count n; ``unbiased`` divides by the per-axis overlap counts
    (n_rows - |h|) * (n_cols - |k|).  ``beta`` records the coefficients that
    were removed before the sums.
    """

    n_rows: int
    n_cols: int
    biased: np.ndarray
    unbiased: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "biased", _ro(self.biased))
        object.__setattr__(self, "unbiased", _ro(self.unbiased))
        object.__setattr__(self, "beta", _ro(np.atleast_1d(self.beta)))


def sample_acf(sample, beta=None):
    """Biased and unbiased sample acf after removing the design surface.

    The biased grid is exactly the Fourier-coefficient table of the
    periodogram of the residual lattice.
    """
    beta = _conform_beta(beta, sample.design.shape[1])
    W = sample.values - sample.mean_surface(beta)
    cross = signal.correlate(W, W, mode="full", method="auto")
    nr, nc = sample.n_rows, sample.n_cols
    h1 = np.arange(-(nr - 1), nr)
    h2 = np.arange(-(nc - 1), nc)
    overlap = np.outer(nr - np.abs(h1), nc - np.abs(h2)).astype(float)
    biased = cross / float(nr * nc)
    unbiased = cross / overlap
    biased = 0.5 * (biased + biased[::-1, ::-1])
    unbiased = 0.5 * (unbiased + unbiased[::-1, ::-1])
    return SampleAcf(n_rows=nr, n_cols=nc, biased=biased, unbiased=unbiased, beta=beta)


def periodogram_ft(sacf, M, which="unbiased"):
    """Fourier transform of a sample acf grid on the order-M frequency mesh.

    Returns a real (2M+1) x (2M+1) array with value at [u + M, v + M] for
    frequency (pi*u/M, pi*v/M).  With ``which="unbiased"`` the result is the
    bias-corrected periodogram; it integrates like the raw periodogram but
    need not be nonnegative.  The imaginary residual is checked to be below
    1e-10 relative and discarded.
    """
    if M < 1:
        raise ValueError("mesh order M must be at least 1")
    g = sacf.unbiased if which == "unbiased" else sacf.biased
    nr, nc = sacf.n_rows, sacf.n_cols
    u = np.arange(-M, M + 1)
    A1 = np.exp(-1j * np.pi * np.outer(np.arange(-(nr - 1), nr), u) / M)
    A2 = np.exp(-1j * np.pi * np.outer(np.arange(-(nc - 1), nc), u) / M)
    out = A1.T @ g @ A2
    scale = max(1.0, np.abs(out.real).max())
    if np.abs(out.imag).max() > 1e-10 * scale:
        raise AssertionError("periodogram imaginary residual too large")
    return out.real


def load_csv(path, design_spec="none", missing="error"):
    """Read a lattice from CSV, one lattice row per line.

    A header line is detected automatically: if any cell of the first line
    fails float parsing, the line is skipped.  Every data row must have the
    same width; parse failures raise LatticeLoadError naming the 1-based row
    and column.  With ``missing="mask"``, NaN cells are allowed and the
    return value is a pair (sample, keep_mask) where masked-out cells hold
    zero in the sample; the default refuses NaN cells.
    """
    if missing not in ("error", "mask"):
        raise ValueError(f"unknown missing policy {missing!r}")
    with open(path) as fh:
        raw_lines = fh.read().splitlines()
    lines = [(i + 1, ln) for i, ln in enumerate(raw_lines) if ln.strip()]
    if not lines:
        raise LatticeLoadError(f"{path}: file is empty")

    def parse_row(line):
        cells = [c.strip() for c in line.split(",")]
        out = []
        for c in cells:
            try:
                out.append(float(c))
            except ValueError:
                return None, cells
        return out, cells

    first_vals, _ = parse_row(lines[0][1])
    start = 0
    if first_vals is None:
        start = 1
        if len(lines) == 1:
            raise LatticeLoadError(f"{path}: no data rows after the header")

    rows = []
    width = None
    for lineno, line in lines[start:]:
        vals, cells = parse_row(line)
        if vals is None:
            bad = next(i for i, c in enumerate(cells) if not _is_float(c))
            raise LatticeLoadError(
                f"{path}: non-numeric value {cells[bad]!r} at row {len(rows) + 1}, "
                f"column {bad + 1} (line {lineno})"
            )
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise LatticeLoadError(
                f"{path}: row {len(rows) + 1} (line {lineno}) has {len(vals)} cells, "
                f"expected {width}"
            )
        rows.append(vals)
    values = np.array(rows, dtype=float)

    finite = np.isfinite(values)
    if missing == "error":
        if not finite.all():
            r, c = np.argwhere(~finite)[0]
            raise LatticeLoadError(
                f"{path}: missing or non-finite value at row {r + 1}, column {c + 1}; "
                "pass missing='mask' to treat NaN cells as unobserved"
            )
        return LatticeSample.from_values(values, design_spec)
    filled = np.where(finite, values, 0.0)
    return LatticeSample.from_values(filled, design_spec), finite


def _is_float(cell):
    try:
        float(cell)
        return True
    except ValueError:
        return False
