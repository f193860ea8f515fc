"""Finite-blocklength rate-distortion limits for piecewise homogeneous
Gaussian random fields on finite lattices."""

__version__ = "0.1.0"

from ._backend import backend_name, set_backend
from .errors import (
    BudgetError,
    CapExceeded,
    ConfigError,
    DegenerateSample,
    DistortionOutOfRange,
    DomainError,
    EmbeddingError,
    LabelError,
    LatticeRDError,
    MissingLag,
    NotPSD,
    ShapeError,
    ShapeMismatch,
    SizeError,
    SpectralKinkWarning,
)
from .field_model import (
    CovarianceKernel,
    Lattice,
    Partition,
    PiecewiseField,
    RegionModel,
    bccb_spectrum,
    build_covariance_matrix,
    build_field,
    region_spectrum,
    validate_field,
    wrapped_kernel,
)
from .distortion import (
    FieldArray,
    global_distortion,
    per_site_distortion,
    regionwise_distortion,
)
from .waterfill import (
    DispersionReport,
    RDPoint,
    SecondOrderRate,
    WaterfillSolution,
    dispersion,
    q_inverse,
    rd_curve,
    region_distortion_at_level,
    region_rate_at_level,
    second_order_rate,
    solve_water_level,
    write_rd_curve_csv,
)
from .bounds import (
    AchievabilityEstimate,
    BoundConfig,
    BoundPoint,
    TiltedDensityModel,
    achievability_bound,
    ball_probability,
    bound_curve,
    converse_bound,
    tilted_density_sample,
    tilted_density_samples,
    write_bound_curve_csv,
)
from .sampler import SampleBatch, sample_field, sample_region
from .diagnostics import (
    ModelScore,
    ModelSelectionResult,
    ProbeReport,
    SecondOrderReport,
    benjamini_hochberg,
    empirical_second_order,
    gaussianity_decision,
    model_selection,
    random_probes,
    shapiro_wilk,
)
from .tiling import (
    FitResult,
    TileDescriptor,
    TileGrid,
    cluster_tiles,
    fit_pipeline,
    fit_region_models,
    tile_descriptors,
    tile_partition,
)
from .modelio import load_batch, load_field, load_model, save_batch, save_field, save_model
