"""Synthetic realizations of piecewise homogeneous Gaussian fields.

Regions are sampled independently by circulant embedding: on the region's
(optionally padded) bounding-box torus the covariance is block-circulant,
so an inverse FFT of spectrum-weighted complex Gaussian noise yields an
exact draw.  Taking the real part performs the Hermitian symmetrization;
the resulting field has exactly the torus (BCCB) covariance used by the
bccb spectra elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distortion import FieldArray
from .errors import EmbeddingError
from .field_model import PSD_TOL, bccb_spectrum
from .streams import TAG_SAMPLE, substream


@dataclass(frozen=True)
class SampleBatch:
    """T field realizations drawn from one model with one master seed."""

    fields: tuple
    seed: int
    model: object  # PiecewiseField

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        if len(self.fields) < 1:
            raise ValueError("a batch holds at least one realization")

    @property
    def T(self):
        return len(self.fields)

    def stack(self):
        """All realizations as one (T, n) array."""
        return np.stack([f.values for f in self.fields])


def sample_region(model, tile_shape, rng, pad_factor=1):
    """One stationary Gaussian draw on a rectangular tile.

    model : RegionModel (mean + kernel; the stored spectrum is not used,
        the embedding torus may differ from the region).
    pad_factor : per-axis enlargement of the embedding torus.  1 keeps the
        exact tile-torus law; 2 reduces wrap-around when free-boundary
        behaviour is wanted.
    """
    tile_shape = tuple(int(m) for m in tile_shape)
    torus = tuple(m * int(pad_factor) for m in tile_shape)
    lam = bccb_spectrum(model.kernel, torus).reshape(torus)
    var = model.kernel.variance
    if lam.min() < -PSD_TOL * var:
        raise EmbeddingError(
            f"kernel not PSD on embedding torus {torus} "
            f"(min eigenvalue {lam.min():.3g}); increase pad_factor"
        )
    lam = np.where(lam < 0.0, 0.0, lam)
    n_t = int(np.prod(torus))
    zeta = (
        rng.standard_normal(torus) + 1j * rng.standard_normal(torus)
    ) / np.sqrt(2.0)
    values = np.fft.ifftn(zeta * np.sqrt(2.0 * lam * n_t)).real
    crop = tuple(slice(0, m) for m in tile_shape)
    return model.mean + values[crop]


def sample_field(field, T, seed, pad_factor=1):
    """T independent realizations of a piecewise field.

    Per-(realization, region) RNG substreams make the batch deterministic
    in (seed, T) regardless of evaluation order; non-rectangular regions
    are drawn on their bounding-box torus and masked to the region.
    """
    T = int(T)
    lattice = field.lattice
    coords = lattice.site_coords()
    region_geometry = []
    for r in range(1, field.K + 1):
        idx = field.partition.region_indices(r)
        sites = coords[idx]
        lo = sites.min(axis=0)
        extent = tuple(int(v) for v in (sites.max(axis=0) - lo + 1))
        rel = sites - lo
        flat_in_box = np.ravel_multi_index(rel.T, extent)
        region_geometry.append((idx, extent, flat_in_box))

    realizations = []
    for t in range(T):
        values = np.empty(lattice.n, dtype=np.float64)
        for r, (idx, extent, flat_in_box) in enumerate(region_geometry, start=1):
            rng = substream(seed, TAG_SAMPLE, t, r)
            box = sample_region(field.regions[r - 1], extent, rng, pad_factor=pad_factor)
            values[idx] = box.ravel()[flat_in_box]
        realizations.append(FieldArray(lattice=lattice, values=values))
    return SampleBatch(fields=tuple(realizations), seed=int(seed), model=field)
