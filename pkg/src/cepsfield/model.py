"""Cepstral models for stationary random fields on a 2-D lattice.

The spectral density is parameterized on the log scale by a finite,
mirror-symmetric grid of cepstral coefficients,

    log F(l1, l2) = sum_{|j|<=p, |k|<=p} Theta[j, k] exp(-i (j l1 + k l2)),

so F is positive by construction and Theta[0, 0] is the mean of log F over
frequencies.  Autocovariances are recovered from the coefficients along two
independent routes: numerical integration of exp(log F) on a frequency mesh
(`acf_mesh`), and an exact scheme that factors the field into causal, skew,
and axial moving averages obtained by recursion (`acf_exact`).  Both routes
are kept side by side on purpose; each one cross-checks the other.

Mesh convention used throughout: order-M meshes hold values at frequencies
pi*u/M for u = -M..M per axis, so grids have (2M+1) points per axis and the
two boundary lines u = -M and u = +M refer to the same frequency modulo 2*pi.
Quadrature over such a mesh therefore defaults to trapezoid weights, which
give each boundary line half weight; see `acf_mesh` for the alternative.
"""

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import signal

__all__ = [
    "CepstralGrid",
    "FreeParamVector",
    "SpectralMesh",
    "AcfTable",
    "MaCoefficients",
    "MaAcfs",
    "TruncationWarning",
    "half_plane_indices",
    "spectrum_on_mesh",
    "acf_mesh",
    "cepstral_to_ma",
    "ma_acf",
    "acf_exact",
    "negate",
    "DEFAULT_TRUNCATION",
]

DEFAULT_TRUNCATION = 25

_SYMMETRY_TOL = 1e-10


class TruncationWarning(UserWarning):
    """Moving-average tails at the truncation boundary exceed the tolerance."""


def half_plane_indices(p):
    """Canonical ordering of the free coefficient sites for order ``p``.

    Mirror symmetry ties Theta[j, k] to Theta[-j, -k], so one representative
    per pair suffices.  The origin comes first, then the half-plane
    representatives {(j, k): k > 0} union {(j, 0): j > 0} in lexicographic
    order.  Length is 2*p**2 + 2*p + 1.
    """
    idx = [(0, 0)]
    for j in range(-p, p + 1):
        for k in range(-p, p + 1):
            if k > 0 or (k == 0 and j > 0):
                idx.append((j, k))
    return idx


def _as_readonly(arr):
    out = np.array(arr, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class CepstralGrid:
    """Mirror-symmetric grid of cepstral coefficients of order ``p``.

    ``theta[j + p, k + p]`` holds Theta[j, k].  ``mask`` marks structural
    zeros (True means the coefficient is constrained to zero); it must be
    mirror symmetric and masked entries of ``theta`` must be exactly zero.
    Instances are immutable; the arrays are stored read-only.
    """

    p: int
    theta: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("grid order p must be at least 1")
        side = 2 * self.p + 1
        theta = np.asarray(self.theta, dtype=float)
        if theta.shape != (side, side):
            raise ValueError(f"theta must have shape ({side}, {side}), got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta contains non-finite entries")
        flipped = theta[::-1, ::-1]
        if not np.allclose(theta, flipped, rtol=0.0, atol=_SYMMETRY_TOL):
            raise ValueError("theta violates the mirror symmetry Theta[j,k] == Theta[-j,-k]")
        theta = 0.5 * (theta + flipped)
        if self.mask is None:
            mask = np.zeros((side, side), dtype=bool)
        else:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != (side, side):
                raise ValueError(f"mask must have shape ({side}, {side}), got {mask.shape}")
            if not np.array_equal(mask, mask[::-1, ::-1]):
                raise ValueError("mask violates the mirror symmetry")
            if np.any(theta[mask] != 0.0):
                raise ValueError("masked coefficients must be exactly zero")
        object.__setattr__(self, "theta", _as_readonly(theta))
        object.__setattr__(self, "mask", _as_readonly(mask))

    # -- constructors ---------------------------------------------------

    @classmethod
    def zeros(cls, p, mask=None):
        side = 2 * p + 1
        return cls(p=p, theta=np.zeros((side, side)), mask=mask)

    @classmethod
    def from_free_params(cls, p, values, mask=None):
        """Build a grid from a vector in the canonical half-plane ordering."""
        side = 2 * p + 1
        if mask is None:
            mask = np.zeros((side, side), dtype=bool)
        else:
            mask = np.asarray(mask, dtype=bool)
        order = [jk for jk in half_plane_indices(p) if not mask[jk[0] + p, jk[1] + p]]
        values = np.asarray(values, dtype=float)
        if values.shape != (len(order),):
            raise ValueError(f"expected {len(order)} free values, got {values.shape}")
        theta = np.zeros((side, side))
        for v, (j, k) in zip(values, order):
            theta[j + p, k + p] = v
            theta[-j + p, -k + p] = v
        return cls(p=p, theta=theta, mask=mask)

    @classmethod
    def from_matrix(cls, matrix, mask=None):
        """Build from the square-matrix layout used by the text serialization.

        The matrix has entry Theta[c - p, p - r] at (row r, column c), both
        zero-based: columns sweep the first index ascending and rows sweep
        the second index descending.
        """
        matrix = np.asarray(matrix, dtype=float)
        side = matrix.shape[0]
        if matrix.ndim != 2 or matrix.shape[1] != side or side % 2 == 0:
            raise ValueError("matrix must be square with odd side length")
        p = (side - 1) // 2
        return cls(p=p, theta=matrix.T[:, ::-1], mask=mask)

    # -- views ----------------------------------------------------------

    def value_at(self, j, k):
        return float(self.theta[j + self.p, k + self.p])

    def to_matrix(self):
        """Square-matrix layout, the inverse of `from_matrix`."""
        return self.theta[:, ::-1].T.copy()

    def free_indices(self):
        p = self.p
        return tuple(jk for jk in half_plane_indices(p) if not self.mask[jk[0] + p, jk[1] + p])

    @property
    def free_count(self):
        return len(self.free_indices())

    def free_params(self):
        p = self.p
        values = np.array([self.theta[j + p, k + p] for j, k in self.free_indices()])
        return FreeParamVector(p=p, values=values, mask=self.mask)

    def negate(self):
        """Grid of the reciprocal spectrum: F with coefficients -Theta."""
        return CepstralGrid(p=self.p, theta=-self.theta, mask=self.mask)

    # -- text serialization ---------------------------------------------

    def save(self, path):
        """Write the matrix layout with a ``p=<int>`` header line."""
        mat = self.to_matrix()
        lines = [f"p={self.p}"]
        for row in mat:
            lines.append(" ".join(f"{v:.17g}" for v in row))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            header = fh.readline().strip()
            if not header.startswith("p="):
                raise ValueError(f"{path}: expected a 'p=<int>' header, got {header!r}")
            try:
                p = int(header[2:])
            except ValueError:
                raise ValueError(f"{path}: malformed order in header {header!r}") from None
            mat = np.loadtxt(fh, ndmin=2)
        side = 2 * p + 1
        if mat.shape != (side, side):
            raise ValueError(f"{path}: expected a {side}x{side} matrix, got {mat.shape}")
        grid = cls.from_matrix(mat)
        if grid.p != p:
            raise ValueError(f"{path}: header p={p} disagrees with matrix size")
        return grid


@dataclass(frozen=True)
class FreeParamVector:
    """Free coefficients in the canonical ordering (origin first)."""

    p: int
    values: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        side = 2 * self.p + 1
        mask = self.mask
        if mask is None:
            mask = np.zeros((side, side), dtype=bool)
        object.__setattr__(self, "values", _as_readonly(np.asarray(self.values, dtype=float)))
        object.__setattr__(self, "mask", _as_readonly(np.asarray(mask, dtype=bool)))

    @property
    def count(self):
        return self.values.shape[0]

    def indices(self):
        p = self.p
        return tuple(jk for jk in half_plane_indices(p) if not self.mask[jk[0] + p, jk[1] + p])

    def to_grid(self):
        return CepstralGrid.from_free_params(self.p, self.values, mask=self.mask)


def negate(grid):
    return grid.negate()


# ---------------------------------------------------------------------------
# Mesh route


@dataclass(frozen=True)
class SpectralMesh:
    """Spectral density on the order-M mesh, values[u + M, v + M] = F(pi*u/M, pi*v/M)."""

    M: int
    values: np.ndarray

    def __post_init__(self):
        side = 2 * self.M + 1
        values = np.asarray(self.values, dtype=float)
        if values.shape != (side, side):
            raise ValueError(f"values must have shape ({side}, {side})")
        if not np.all(values > 0.0):
            raise ValueError("spectral values must be strictly positive")
        object.__setattr__(self, "values", _as_readonly(values))

    @property
    def frequencies(self):
        return np.pi * np.arange(-self.M, self.M + 1) / self.M


def _log_spectrum_direct(grid, M):
    p = grid.p
    u = np.arange(-M, M + 1)
    A = np.exp(-1j * np.pi * np.outer(np.arange(-p, p + 1), u) / M)
    out = A.T @ (grid.theta @ A)
    resid = np.abs(out.imag).max()
    if resid > 1e-9:
        raise AssertionError(f"log-spectrum imaginary residual {resid:.2e} too large")
    return np.ascontiguousarray(out.real)


def _log_spectrum_fft(grid, M):
    # Frequencies pi*u/M repeat with period 2M in u, so the grid restricted to
    # u = -M..M-1 is a plain 2M-point DFT of the coefficient array; the u = M
    # line duplicates u = -M.
    p = grid.p
    if M <= p:
        return _log_spectrum_direct(grid, M)
    S = 2 * M
    spots = np.arange(-p, p + 1) % S
    T = np.zeros((S, S))
    T[np.ix_(spots, spots)] = grid.theta
    core = np.fft.fftshift(np.fft.fft2(T))
    resid = np.abs(core.imag).max()
    # mirror symmetry makes the transform real; the rounding residual scales
    # with the coefficient magnitude, so the tolerance must as well
    if resid > 1e-9 * max(1.0, np.abs(grid.theta).max()):
        raise AssertionError(f"log-spectrum imaginary residual {resid:.2e} too large")
    core = core.real
    side = S + 1
    full = np.empty((side, side))
    full[:S, :S] = core
    full[S, :S] = core[0, :]
    full[:S, S] = full[:S, 0]
    full[S, S] = core[0, 0]
    return full


def log_spectrum_on_mesh(grid, M, method="auto"):
    """Evaluate log F on the order-M mesh.

    Two interchangeable evaluation routes exist: small dense matrix products
    ("direct") and a zero-padded FFT ("fft").  They agree to 1e-10 and the
    choice never affects results beyond rounding; "auto" picks the FFT for
    large meshes.
    """
    if M < grid.p:
        raise ValueError(f"mesh order M={M} must be at least the grid order p={grid.p}")
    if method == "auto":
        method = "fft" if M >= 64 else "direct"
    if method == "direct":
        return _log_spectrum_direct(grid, M)
    if method == "fft":
        return _log_spectrum_fft(grid, M)
    raise ValueError(f"unknown method {method!r}")


def spectrum_on_mesh(grid, M, method="auto"):
    """Spectral density F = exp(log F) on the order-M mesh."""
    return SpectralMesh(M=M, values=np.exp(log_spectrum_on_mesh(grid, M, method)))


@dataclass(frozen=True)
class AcfTable:
    """Autocovariances on a centered square window, gamma[h + H, k + H] = gamma(h, k)."""

    H: int
    gamma: np.ndarray

    def __post_init__(self):
        side = 2 * self.H + 1
        g = np.asarray(self.gamma, dtype=float)
        if g.shape != (side, side):
            raise ValueError(f"gamma must have shape ({side}, {side})")
        if not np.allclose(g, g[::-1, ::-1], rtol=0.0, atol=1e-8 * max(1.0, np.abs(g).max())):
            raise ValueError("acf table violates the symmetry gamma(h,k) == gamma(-h,-k)")
        g = 0.5 * (g + g[::-1, ::-1])
        origin = g[self.H, self.H]
        if not origin > 0.0:
            raise ValueError("variance gamma(0,0) must be positive")
        if np.abs(g).max() > origin * (1.0 + 1e-8):
            raise ValueError("acf table violates |gamma(h,k)| <= gamma(0,0)")
        object.__setattr__(self, "gamma", _as_readonly(g))

    @property
    def origin(self):
        return float(self.gamma[self.H, self.H])

    def value_at(self, h, k):
        return float(self.gamma[h + self.H, k + self.H])

    def window(self, h_max, k_max):
        """Rectangular sub-window with |h| <= h_max, |k| <= k_max."""
        if h_max > self.H or k_max > self.H:
            raise ValueError("requested window exceeds the table extent")
        H = self.H
        return self.gamma[H - h_max : H + h_max + 1, H - k_max : H + k_max + 1]


def acf_mesh(grid, M, H, endpoint_rule="trapezoid"):
    """Autocovariances by quadrature of the spectrum over the order-M mesh.

    Parameters
    ----------
    grid : CepstralGrid
    M : int
        Mesh order; must satisfy M >= max(p, H).
    H : int
        Largest lag retained per axis; the result covers |h|, |k| <= H.
    endpoint_rule : {"trapezoid", "plain"}
        The mesh includes both boundary lines u = -M and u = +M, which are
        the same frequency modulo 2*pi.  "trapezoid" gives the duplicated
        lines half weight, making the quadrature exact for band-limited
        integrands up to aliasing.  "plain" weights every mesh point equally
        and divides by (2M+1)^2; it carries an O(1/M) boundary error and is
        kept only for comparison studies.

    Returns
    -------
    AcfTable
    """
    if H < 0:
        raise ValueError("H must be nonnegative")
    if M < max(grid.p, H, 1):
        raise ValueError(f"mesh order M={M} must be at least max(p, H) = {max(grid.p, H)}")
    if endpoint_rule not in ("trapezoid", "plain"):
        raise ValueError(f"unknown endpoint rule {endpoint_rule!r}")
    F = spectrum_on_mesh(grid, M).values
    w = np.ones(2 * M + 1)
    if endpoint_rule == "trapezoid":
        w[0] = w[-1] = 0.5
        norm = float((2 * M) ** 2)
    else:
        norm = float((2 * M + 1) ** 2)
    u = np.arange(-M, M + 1)
    B = np.exp(1j * np.pi * np.outer(np.arange(-H, H + 1), u) / M) * w
    out = (B @ F @ B.T) / norm
    resid = np.abs(out.imag).max()
    scale = max(1.0, np.abs(out.real).max())
    if resid > 1e-8 * scale:
        raise AssertionError(f"acf imaginary residual {resid:.2e} too large")
    g = out.real
    g = 0.5 * (g + g[::-1, ::-1])
    return AcfTable(H=H, gamma=g)


# ---------------------------------------------------------------------------
# Exact route: quadrant factorization and moving-average recursions


@dataclass(frozen=True)
class MaCoefficients:
    """Moving-average weights of the four factor fields.

    psi is the causal (positive-quadrant) factor, phi the skew factor whose
    weight phi[j, k] attaches to lag (-j, +k), and xi, omega the two axial
    factors.  All arrays run from index 0 to the truncation K per axis.
    ``tail`` is the largest absolute weight on the truncation boundary.
    """

    K: int
    psi: np.ndarray
    phi: np.ndarray
    xi: np.ndarray
    omega: np.ndarray
    tail: float

    def __post_init__(self):
        object.__setattr__(self, "psi", _as_readonly(self.psi))
        object.__setattr__(self, "phi", _as_readonly(self.phi))
        object.__setattr__(self, "xi", _as_readonly(self.xi))
        object.__setattr__(self, "omega", _as_readonly(self.omega))


class MaAcfs(NamedTuple):
    psi: np.ndarray
    phi: np.ndarray
    xi: np.ndarray
    omega: np.ndarray


def _quadrant_recursion(K, coef):
    """exp of a strictly positive-quadrant polynomial, weights on [0..K]^2.

    ``coef[m - 1, n - 1]`` multiplies lag (m, n) for m, n = 1..p.  The
    differential recursion fills row j from rows j-1..j-p, dividing by j.
    """
    p = coef.shape[0]
    out = np.zeros((K + 1, K + 1))
    out[0, 0] = 1.0
    for j in range(1, K + 1):
        for k in range(1, K + 1):
            acc = 0.0
            for m in range(1, min(p, j) + 1):
                row = out[j - m]
                cm = coef[m - 1]
                for n in range(1, min(p, k) + 1):
                    acc += m * row[k - n] * cm[n - 1]
            out[j, k] = acc / j
    return out


def _axis_recursion(K, coef):
    """exp of a one-sided 1-D polynomial; coef[m - 1] multiplies lag m."""
    p = coef.shape[0]
    out = np.zeros(K + 1)
    out[0] = 1.0
    for j in range(1, K + 1):
        acc = 0.0
        for m in range(1, min(p, j) + 1):
            acc += m * coef[m - 1] * out[j - m]
        out[j] = acc / j
    return out


def cepstral_to_ma(grid, K=DEFAULT_TRUNCATION, tail_tol=1e-12):
    """Moving-average weights of the four factor fields by exact recursion.

    The spectrum factorizes over the quadrants of the coefficient grid:
    a causal factor driven by Theta[j, k] with j, k >= 1, a skew factor
    driven by Theta[-j, k], and two axial factors driven by Theta[j, 0] and
    Theta[0, k].  Each factor is the exp of a polynomial, so its weights
    satisfy a linear recursion obtained by differentiating; no numerical
    integration is involved.

    Warns with TruncationWarning when the boundary weights at the truncation
    K still exceed ``tail_tol``.
    """
    if K < 1:
        raise ValueError("truncation K must be at least 1")
    p = grid.p
    t = grid.theta
    quad_pos = np.array([[t[m + p, n + p] for n in range(1, p + 1)] for m in range(1, p + 1)])
    quad_skew = np.array([[t[-m + p, n + p] for n in range(1, p + 1)] for m in range(1, p + 1)])
    ax_row = np.array([t[m + p, p] for m in range(1, p + 1)])
    ax_col = np.array([t[p, n + p] for n in range(1, p + 1)])

    psi = _quadrant_recursion(K, quad_pos)
    phi = _quadrant_recursion(K, quad_skew)
    xi = _axis_recursion(K, ax_row)
    omega = _axis_recursion(K, ax_col)

    anti = np.arange(K + 1)
    tail = max(
        np.abs(psi[anti, K - anti]).max(),
        np.abs(phi[anti, K - anti]).max(),
        abs(xi[K]),
        abs(omega[K]),
    )
    if tail > tail_tol:
        warnings.warn(
            f"moving-average tail {tail:.3e} at truncation K={K} exceeds {tail_tol:.1e}; "
            "increase K",
            TruncationWarning,
            stacklevel=2,
        )
    return MaCoefficients(K=K, psi=psi, phi=phi, xi=xi, omega=omega, tail=float(tail))


def ma_acf(ma):
    """Autocorrelation tables of the four factor fields.

    Each table is the full (auto-)correlation of the corresponding weight
    array: the 2-D tables cover lags -K..K per axis with the zero lag at
    index K, the 1-D tables likewise.
    """
    g_psi = signal.correlate(ma.psi, ma.psi, mode="full", method="auto")
    g_phi = signal.correlate(ma.phi, ma.phi, mode="full", method="auto")
    g_xi = np.correlate(ma.xi, ma.xi, mode="full")
    g_omega = np.correlate(ma.omega, ma.omega, mode="full")
    return MaAcfs(psi=g_psi, phi=g_phi, xi=g_xi, omega=g_omega)


def acf_exact(grid, H, K=DEFAULT_TRUNCATION, tail_tol=1e-12):
    """Autocovariances assembled from the exact factor recursions.

    The spectrum is exp(Theta[0,0]) times the product of the four factor
    spectra, so the acf is the corresponding convolution of the factor
    acfs, with the skew factor entering mirror-reversed in its first index.
    Requires H <= K; the default truncation keeps boundary weights below
    1e-12 for moderately sized coefficients.
    """
    if H < 0:
        raise ValueError("H must be nonnegative")
    if H > K:
        raise ValueError(f"H={H} exceeds the truncation K={K}")
    ma = cepstral_to_ma(grid, K=K, tail_tol=tail_tol)
    g = ma_acf(ma)
    K_ = ma.K
    axial = np.outer(g.xi, g.omega)
    inner = signal.convolve(g.psi, axial, mode="full", method="auto")
    skew = g.phi[::-1, :]
    total = signal.convolve(inner, skew, mode="full", method="auto")
    c = 3 * K_
    scale = float(np.exp(grid.value_at(0, 0)))
    out = scale * total[c - H : c + H + 1, c - H : c + H + 1]
    out = 0.5 * (out + out[::-1, ::-1])
    return AcfTable(H=H, gamma=out)
