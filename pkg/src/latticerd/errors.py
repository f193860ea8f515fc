"""Exception and warning types shared across the package."""


class LatticeRDError(Exception):
    """Base class for all package errors."""


class MissingLag(LatticeRDError):
    """Tabulated kernel queried at a lag it does not define."""


class CapExceeded(LatticeRDError):
    """Dense eigendecomposition requested above the configured site cap."""


class ShapeError(LatticeRDError):
    """Region geometry incompatible with the requested method."""


class NotPSD(LatticeRDError):
    """Covariance spectrum negative beyond tolerance."""


class ShapeMismatch(LatticeRDError):
    """Field arrays or partitions defined on different lattices."""


class DistortionOutOfRange(LatticeRDError):
    """Target distortion outside (0, variance level)."""


class DomainError(LatticeRDError):
    """Scalar argument outside its mathematical domain."""


class EmbeddingError(LatticeRDError):
    """Circulant embedding torus produced a negative spectrum."""


class ConfigError(LatticeRDError):
    """Invalid run configuration value."""


class BudgetError(LatticeRDError):
    """Regionwise distortion allocation violates the global budget."""


class DegenerateSample(LatticeRDError):
    """Statistical test input with zero variance."""


class SizeError(LatticeRDError):
    """Input length outside the supported range."""


class LabelError(LatticeRDError):
    """Region label set inconsistent with the data."""


class SpectralKinkWarning(UserWarning):
    """Water level within tolerance of an eigenvalue; dispersion formula
    is unreliable at spectral kinks."""
