"""Cepstral spectral models for stationary random fields on 2-D lattices."""

from .model import (
    AcfTable,
    CepstralGrid,
    FreeParamVector,
    MaCoefficients,
    SpectralMesh,
    TruncationWarning,
    acf_exact,
    acf_mesh,
    cepstral_to_ma,
    half_plane_indices,
    ma_acf,
    negate,
    spectrum_on_mesh,
)
from .lattice import (
    LatticeLoadError,
    LatticeSample,
    SampleAcf,
    build_design,
    devectorize,
    load_csv,
    periodogram_ft,
    sample_acf,
)
from .covariance import (
    BlockToeplitzCov,
    CholFactor,
    NotPositiveDefiniteError,
    assemble,
    factor,
    quad_form,
    simulate,
    whiten,
)
from .objectives import (
    ObjectiveValue,
    evaluate_objective,
    gaussian_loglik,
    gls_beta,
    kl_divergence,
    model_acf,
    whittle_approx,
    whittle_exact,
)
from .estimation import (
    FitConfig,
    FitResult,
    LrTestResult,
    McmcConfig,
    fit,
    lr_test,
    mcmc_fit,
    refine_by_deletion,
    standard_errors,
)
from .diagnostics import InfoCriteria, MoranResult, info_criteria, morans_i, residuals
from .extensions import (
    ExtractionResult,
    SelectionMap,
    SignalNoiseSpec,
    extract_signal,
    missing_loglik,
)
from .datasets import load_mercer_hall_straw, mercer_hall_straw_path

__version__ = "0.1.0"
