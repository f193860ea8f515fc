"""Lattices, region partitions, stationary covariance kernels, and the
piecewise homogeneous Gaussian source model.

A field model is a finite 2-d or 3-d lattice, a partition of its sites into
K regions, and one stationary Gaussian law per region (mean, covariance
kernel, eigen-spectrum).  Regions are mutually independent; cross-region
covariance is identically zero by model assumption.

Spectra come in two flavours, reflecting the two natural boundary
conventions for a stationary region:

* ``dense`` — eigendecomposition of the exact free-boundary covariance
  matrix ``C[i, j] = Gamma(s_i - s_j)``;
* ``bccb`` — eigenvalues of the block-circulant (torus) covariance, i.e.
  the real multidimensional DFT of the kernel wrapped onto the region's
  rectangular tile.  Wrapping sums the kernel over periodic images, which
  keeps the spectrum nonnegative for any kernel that is positive
  semidefinite on the infinite lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CapExceeded, MissingLag, NotPSD, ShapeError

KERNEL_KINDS = ("white", "exponential", "squared_exponential", "tabulated")

#: eigenvalue clamp tolerance, relative to the kernel variance
PSD_TOL = 1e-9

#: default cap on dense eigendecompositions
DENSE_CAP = 4096


@dataclass(frozen=True)
class Lattice:
    """Finite discrete index lattice with side lengths ``dims``."""

    dims: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) not in (2, 3):
            raise ShapeError(f"lattice dimension must be 2 or 3, got {len(dims)}")
        if any(d < 1 for d in dims):
            raise ShapeError(f"lattice sides must be >= 1, got {dims}")

    @property
    def d(self):
        return len(self.dims)

    @property
    def n(self):
        return int(np.prod(self.dims))

    def site_coords(self):
        """All site coordinates in row-major order, shape (n, d)."""
        return np.indices(self.dims).reshape(self.d, -1).T.astype(np.int64)


@dataclass(frozen=True)
class Partition:
    """Per-site region labels in {1..K} plus derived sizes and weights."""

    labels: np.ndarray
    K: int
    region_sizes: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_labels(cls, labels, K=None):
        labels = np.asarray(labels, dtype=np.int64).ravel()
        if K is None:
            K = int(labels.max()) if labels.size else 0
        counts = np.bincount(labels[(labels >= 1) & (labels <= K)], minlength=K + 1)[1:]
        n = labels.size
        weights = counts / n if n else counts.astype(float)
        return cls(labels=labels, K=int(K), region_sizes=counts, weights=weights)

    def region_indices(self, r):
        """Flat site indices of region ``r`` (1-based)."""
        return np.flatnonzero(self.labels == r)


def canonical_lag(h):
    """Sign-normalized lag tuple: Gamma(h) = Gamma(-h), store one of each pair."""
    h = tuple(int(v) for v in h)
    for v in h:
        if v > 0:
            return h
        if v < 0:
            return tuple(-v for v in h)
    return h


@dataclass(frozen=True)
class CovarianceKernel:
    """Stationary covariance kernel Gamma(h).

    kind : one of ``white``, ``exponential``, ``squared_exponential``,
        ``tabulated``.
    variance : Gamma(0).
    length_scale : correlation length in lattice steps (absent for white
        and tabulated kinds).
    table : canonical-lag -> value map for the tabulated kind.
    compact_support : a tabulated kernel returns 0 outside its table only
        when this is set; otherwise the lookup raises MissingLag.
    """

    kind: str
    variance: float
    length_scale: Optional[float] = None
    table: Optional[dict] = None
    compact_support: bool = False

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.variance < 0:
            raise ValueError("variance must be >= 0")
        if self.kind in ("exponential", "squared_exponential"):
            if self.length_scale is None or self.length_scale <= 0:
                raise ValueError(f"{self.kind} kernel requires length_scale > 0")
        if self.kind == "tabulated":
            if not self.table:
                raise ValueError("tabulated kernel requires a lag table")
            table = {canonical_lag(k): float(v) for k, v in self.table.items()}
            object.__setattr__(self, "table", table)

    def evaluate(self, lags):
        """Gamma at integer lag vectors, shape (m, d) -> (m,)."""
        lags = np.atleast_2d(np.asarray(lags, dtype=np.int64))
        if self.kind == "white":
            return np.where((lags == 0).all(axis=1), self.variance, 0.0)
        if self.kind == "exponential":
            dist = np.sqrt((lags.astype(np.float64) ** 2).sum(axis=1))
            return self.variance * np.exp(-dist / self.length_scale)
        if self.kind == "squared_exponential":
            d2 = (lags.astype(np.float64) ** 2).sum(axis=1)
            return self.variance * np.exp(-d2 / (2.0 * self.length_scale**2))
        out = np.empty(lags.shape[0], dtype=np.float64)
        for i, h in enumerate(lags):
            key = canonical_lag(h)
            if key in self.table:
                out[i] = self.table[key]
            elif self.compact_support:
                out[i] = 0.0
            else:
                raise MissingLag(f"tabulated kernel has no value at lag {key}")
        return out


def build_covariance_matrix(kernel, sites):
    """Exact free-boundary covariance matrix over a site set.

    Entry (i, j) is Gamma(s_i - s_j); symmetric with diagonal Gamma(0).
    """
    sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
    if sites.shape[0] == 0:
        raise ShapeError("site set must be nonempty")
    m = sites.shape[0]
    lags = sites[:, None, :] - sites[None, :, :]
    vals = kernel.evaluate(lags.reshape(m * m, -1)).reshape(m, m)
    return 0.5 * (vals + vals.T)


def _signed_torus_lags(shape):
    """Per-axis signed minimum-image lags for a torus of the given shape."""
    return [
        np.where(np.arange(m) <= m // 2, np.arange(m), np.arange(m) - m)
        for m in shape
    ]


def wrapped_kernel(kernel, shape):
    """Kernel wrapped onto a torus of the given shape.

    Analytic kinds are periodically summed over images (exact up to a
    truncation below 1e-16 of the variance); tabulated kernels are looked
    up at the minimum-image signed lag.
    """
    shape = tuple(int(m) for m in shape)
    axes = _signed_torus_lags(shape)
    grids = np.meshgrid(*axes, indexing="ij")
    lags = np.stack([g.ravel() for g in grids], axis=1)

    if kernel.kind == "white":
        c = np.zeros(shape)
        c[(0,) * len(shape)] = kernel.variance
        return c
    if kernel.kind == "tabulated":
        return kernel.evaluate(lags).reshape(shape)

    if kernel.kind == "exponential":
        reach = 37.0 * kernel.length_scale
    else:
        reach = 8.6 * kernel.length_scale
    out = np.zeros(len(lags), dtype=np.float64)
    ranges = [range(-(int(math.ceil(reach / m)) + 1), int(math.ceil(reach / m)) + 2) for m in shape]
    for image in np.stack(np.meshgrid(*[list(r) for r in ranges], indexing="ij"), axis=-1).reshape(-1, len(shape)):
        shifted = lags + image * np.asarray(shape, dtype=np.int64)
        out += kernel.evaluate(shifted)
    return out.reshape(shape)


def bccb_spectrum(kernel, tile_shape):
    """Raw BCCB (torus) eigenvalues: real multidimensional DFT of the
    wrapped kernel.  Unsorted, unclamped."""
    c = wrapped_kernel(kernel, tile_shape)
    return np.fft.fftn(c).real.ravel()


def clamp_spectrum(lam, variance, tol=PSD_TOL):
    """Zero out numerically-negative eigenvalues; abort beyond tolerance."""
    lam = np.asarray(lam, dtype=np.float64)
    floor = -tol * max(variance, 0.0)
    worst = lam.min() if lam.size else 0.0
    if worst < floor:
        raise NotPSD(
            f"spectrum has eigenvalue {worst:.6g} below tolerance {floor:.6g}"
        )
    return np.where(lam < 0.0, 0.0, lam)


def _rectangular_extent(sites):
    """Tile shape if the site set is a full rectangular box, else None."""
    sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
    lo = sites.min(axis=0)
    hi = sites.max(axis=0)
    extent = tuple(int(v) for v in (hi - lo + 1))
    if int(np.prod(extent)) != sites.shape[0]:
        return None
    # full box iff all sites distinct within the bounding box
    rel = sites - lo
    flat = np.ravel_multi_index(rel.T, extent)
    if np.unique(flat).size != sites.shape[0]:
        return None
    return extent


def region_spectrum(kernel, sites, method="dense", dense_cap=DENSE_CAP):
    """Eigen-spectrum of one region's covariance, nonincreasing and
    clamped nonnegative.

    dense : symmetric eigendecomposition of the free-boundary matrix;
        requires at most ``dense_cap`` sites.
    bccb : torus spectrum of the kernel on the region's rectangular tile;
        requires the region to be a full rectangular box.
    """
    sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
    if method == "dense":
        if sites.shape[0] > dense_cap:
            raise CapExceeded(
                f"dense method limited to {dense_cap} sites, got {sites.shape[0]}"
            )
        lam = np.linalg.eigvalsh(build_covariance_matrix(kernel, sites))
    elif method == "bccb":
        extent = _rectangular_extent(sites)
        if extent is None:
            raise ShapeError("bccb method requires a full rectangular tile")
        lam = bccb_spectrum(kernel, extent)
    else:
        raise ValueError(f"unknown spectrum method {method!r}")
    lam = clamp_spectrum(lam, kernel.variance)
    return np.sort(lam)[::-1]


@dataclass(frozen=True)
class RegionModel:
    """One region's stationary Gaussian law.

    ``spectrum`` holds the n_r covariance eigenvalues, nonincreasing.
    ``tile_shape`` records the torus a bccb spectrum was computed on when
    the region is not itself rectangular (tile-pooled fits); in that case
    ``margin_sites`` counts the off-grid sites carried as white modes.
    """

    mean: float
    kernel: CovarianceKernel
    spectrum: np.ndarray
    spectrum_method: str = "dense"
    tile_shape: Optional[tuple] = None
    margin_sites: int = 0

    def __post_init__(self):
        spec = np.asarray(self.spectrum, dtype=np.float64)
        object.__setattr__(self, "spectrum", spec)

    @property
    def n_sites(self):
        return int(self.spectrum.size)


@dataclass(frozen=True)
class PiecewiseField:
    """Lattice + partition + per-region stationary Gaussian models."""

    lattice: Lattice
    partition: Partition
    regions: tuple

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))

    @property
    def K(self):
        return self.partition.K

    @property
    def weights(self):
        return self.partition.weights

    def region_sites(self, r):
        idx = self.partition.region_indices(r)
        return self.lattice.site_coords()[idx]


def build_field(dims, labels, region_params, spectrum_method="auto", dense_cap=DENSE_CAP):
    """Assemble a PiecewiseField, computing each region's spectrum.

    region_params : sequence of (mean, CovarianceKernel), indexed by region.
    spectrum_method : ``dense``, ``bccb``, or ``auto`` (bccb for
        rectangular regions, dense otherwise).
    """
    lattice = Lattice(tuple(dims))
    partition = Partition.from_labels(labels)
    coords = lattice.site_coords()
    regions = []
    for r in range(1, partition.K + 1):
        mean, kernel = region_params[r - 1]
        sites = coords[partition.region_indices(r)]
        if spectrum_method == "auto":
            method = "bccb" if _rectangular_extent(sites) is not None else "dense"
        else:
            method = spectrum_method
        spec = region_spectrum(kernel, sites, method=method, dense_cap=dense_cap)
        regions.append(
            RegionModel(mean=float(mean), kernel=kernel, spectrum=spec, spectrum_method=method)
        )
    return PiecewiseField(lattice=lattice, partition=partition, regions=tuple(regions))


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    where: str


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def add(self, code, message, where):
        self.violations.append(Violation(code, message, where))


def validate_field(field_model):
    """Check every model invariant; report violations instead of raising."""
    report = ValidationReport()
    lat = field_model.lattice
    part = field_model.partition
    n = lat.n

    labels = part.labels
    if labels.size != n:
        report.add("label_length", f"{labels.size} labels for {n} sites", "partition")
    uncovered = int(((labels < 1) | (labels > part.K)).sum())
    if uncovered:
        report.add(
            "coverage",
            f"partition does not cover lattice: {uncovered} unlabeled site(s)",
            "partition",
        )
    if (part.region_sizes < 1).any():
        empty = [r + 1 for r in np.flatnonzero(part.region_sizes < 1)]
        report.add("empty_region", f"regions {empty} have no sites", "partition")
    if labels.size == n and abs(part.weights.sum() - 1.0) > 1e-12 and not uncovered:
        report.add("weights", f"weights sum to {part.weights.sum()!r}", "partition")

    if len(field_model.regions) != part.K:
        report.add(
            "region_count",
            f"{len(field_model.regions)} region models for K={part.K}",
            "regions",
        )
        return report

    coords = lat.site_coords()
    for r in range(1, part.K + 1):
        model = field_model.regions[r - 1]
        where = f"region {r}"
        n_r = int(part.region_sizes[r - 1])
        spec = model.spectrum
        var = model.kernel.variance

        if spec.size != n_r:
            report.add("spectrum_length", f"spectrum length {spec.size} != n_r {n_r}", where)
        if spec.size and spec.min() < -PSD_TOL * var:
            report.add("spectrum_negative", f"eigenvalue {spec.min():.3g} < 0", where)
        if spec.size > 1 and (np.diff(spec) > 1e-12 * max(var, 1.0)).any():
            report.add("spectrum_order", "spectrum is not nonincreasing", where)

        if model.kernel.kind == "tabulated":
            g0 = model.kernel.evaluate([(0,) * lat.d])[0]
            if not math.isclose(g0, var, rel_tol=1e-9, abs_tol=1e-12):
                report.add("gamma0", f"Gamma(0)={g0!r} != variance {var!r}", where)

        sites = coords[part.region_indices(r)]
        if sites.shape[0] == 0:
            continue

        torus = model.tile_shape
        if torus is None:
            torus = tuple(int(v) for v in (sites.max(axis=0) - sites.min(axis=0) + 1))
        try:
            lam_torus = bccb_spectrum(model.kernel, torus)
            if lam_torus.min() < -PSD_TOL * var:
                report.add(
                    "kernel_psd",
                    f"kernel DFT on torus {torus} reaches {lam_torus.min():.6g}",
                    where,
                )
        except MissingLag as exc:
            report.add("kernel_lags", str(exc), where)
            lam_torus = None

        if spec.size == n_r and n_r > 0:
            if model.spectrum_method == "dense":
                trace = n_r * var
                tol = 1e-8
            else:
                if lam_torus is None:
                    continue
                c0 = wrapped_kernel(model.kernel, torus)[(0,) * len(torus)]
                margin = model.margin_sites
                n_tiles = (n_r - margin) // int(np.prod(torus)) if model.tile_shape else 1
                trace = n_tiles * int(np.prod(torus)) * c0 + margin * var
                tol = 1e-6
            if trace > 0 and abs(spec.sum() - trace) > tol * trace:
                report.add(
                    "trace",
                    f"spectrum sum {spec.sum():.12g} vs trace {trace:.12g}",
                    where,
                )
    return report
