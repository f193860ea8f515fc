import numpy as np
import pytest

from latticerd.field_model import (
    CovarianceKernel,
    Lattice,
    Partition,
    PiecewiseField,
    RegionModel,
)


def field_from_spectra(spectra, means=None):
    """PiecewiseField with explicit eigen-spectra on a 1 x n lattice.

    Kernels are placeholders (white at the top eigenvalue); only the
    spectra matter for water-filling and bound computations.
    """
    spectra = [np.sort(np.asarray(s, dtype=np.float64))[::-1] for s in spectra]
    sizes = [s.size for s in spectra]
    n = sum(sizes)
    labels = np.concatenate([np.full(m, r + 1) for r, m in enumerate(sizes)])
    means = means or [0.0] * len(spectra)
    regions = tuple(
        RegionModel(
            mean=float(means[r]),
            kernel=CovarianceKernel("white", float(max(s.max(), 1e-12))),
            spectrum=s,
            spectrum_method="dense",
        )
        for r, s in enumerate(spectra)
    )
    return PiecewiseField(
        lattice=Lattice((1, n)),
        partition=Partition.from_labels(labels),
        regions=regions,
    )


def two_region_gap_model(m, s2=2.0):
    """The scale-family model used for bound curves: two half-lattice
    regions with squared-exponential kernels, correlation length m/4.

    Spiked spectra keep the active-mode set small and fixed across m, so
    Monte Carlo bound evaluation stays cheap at every lattice size.
    """
    import latticerd as lrd

    labels = np.ones((m, m), dtype=int)
    labels[:, m // 2 :] = 2
    k1 = CovarianceKernel("squared_exponential", 1.0, length_scale=m / 4)
    k2 = CovarianceKernel("squared_exponential", s2, length_scale=m / 4)
    return lrd.build_field(
        (m, m), labels.ravel(), [(0.0, k1), (3.0, k2)], spectrum_method="bccb"
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)
