"""Tile-based fitting of a piecewise model from data.

The lattice is cut into non-overlapping k x k (or k^3) tiles; each tile
gets a small second-order descriptor vector; tiles are clustered into K
regions; and region parameters (mean, circular autocovariance) are
estimated by pooling the tiles of each label.  K is chosen by the BIC of
the induced piecewise Gaussian fit.

Region covariance is modeled per tile: a region is a union of
independent tiles, each carrying the BCCB law of the pooled kernel on
the tile torus.  Its eigen-spectrum is therefore the tile spectrum
repeated per tile; margin sites appended to a region enter as white
modes at the kernel variance, which keeps the spectrum length and trace
exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.cluster import KMeans

from .errors import ConfigError, LabelError, SizeError
from .field_model import (
    CovarianceKernel,
    Partition,
    PiecewiseField,
    RegionModel,
    canonical_lag,
)
from .streams import TAG_FIT, substream_u32


@dataclass(frozen=True)
class TileGrid:
    """Non-overlapping rectangular tiles plus the leftover margin."""

    lattice: object
    k: int
    tile_shape: tuple
    tile_origins: np.ndarray  # (N_tau, d)
    tile_sites: tuple  # flat site indices per tile
    margin_sites: np.ndarray  # flat indices not covered by any tile
    remainder_policy: str

    @property
    def N_tau(self):
        return len(self.tile_sites)


def tile_partition(lattice, k, remainder_policy="nearest"):
    """Cut a lattice into floor(dim/k) tiles per axis.

    Margin sites (when a side is not a multiple of k) are listed
    separately and handled by ``remainder_policy`` at fit time.
    """
    k = int(k)
    if k < 2:
        raise ConfigError(f"tile size must be >= 2, got {k}")
    if k > min(lattice.dims):
        raise ConfigError(f"tile size {k} exceeds smallest lattice side {min(lattice.dims)}")
    if remainder_policy not in ("nearest",):
        raise ConfigError(f"unknown remainder policy {remainder_policy!r}")
    d = lattice.d
    per_axis = [np.arange(dim // k) * k for dim in lattice.dims]
    origin_grids = np.meshgrid(*per_axis, indexing="ij")
    origins = np.stack([g.ravel() for g in origin_grids], axis=1)

    shape = (k,) * d
    offsets_axes = np.meshgrid(*[np.arange(k)] * d, indexing="ij")
    offsets = np.stack([g.ravel() for g in offsets_axes], axis=1)

    covered = np.zeros(lattice.n, dtype=bool)
    tile_sites = []
    for origin in origins:
        coords = origin[None, :] + offsets
        flat = np.ravel_multi_index(coords.T, lattice.dims)
        tile_sites.append(flat)
        covered[flat] = True
    margin = np.flatnonzero(~covered)
    return TileGrid(
        lattice=lattice,
        k=k,
        tile_shape=shape,
        tile_origins=origins,
        tile_sites=tuple(tile_sites),
        margin_sites=margin,
        remainder_policy=remainder_policy,
    )


@dataclass(frozen=True)
class TileDescriptor:
    tile_id: int
    mean: float
    variance: float
    autocov_features: tuple  # variance-normalized circular autocov, axis lags 1 and 2


def tile_descriptors(batch, grid):
    """Second-order descriptors per tile, pooled over realizations."""
    data = batch.stack()
    shape = grid.tile_shape
    d = len(shape)
    out = []
    for tid, flat in enumerate(grid.tile_sites):
        block = data[:, flat].reshape((batch.T,) + shape)
        mean = float(block.mean())
        centered = block - mean
        var = float((centered**2).mean())
        feats = []
        for lag in (1, 2):
            acc = 0.0
            for axis in range(d):
                shifted = np.roll(centered, lag, axis=axis + 1)
                acc += float((centered * shifted).mean())
            feats.append(acc / d / var if var > 0 else 0.0)
        out.append(
            TileDescriptor(
                tile_id=tid, mean=mean, variance=var, autocov_features=tuple(feats)
            )
        )
    return out


def descriptor_matrix(descriptors):
    """Standardized feature matrix (mean, log variance, lag features)."""
    rows = np.array(
        [
            [d.mean, math.log(max(d.variance, 1e-300))] + list(d.autocov_features)
            for d in descriptors
        ]
    )
    mu = rows.mean(axis=0)
    sd = rows.std(axis=0)
    sd[sd == 0] = 1.0
    return (rows - mu) / sd


def _canonical_lag_count(shape):
    """Free parameters of a symmetric autocovariance on the given torus."""
    axes = [np.where(np.arange(m) <= m // 2, np.arange(m), np.arange(m) - m) for m in shape]
    grids = np.meshgrid(*axes, indexing="ij")
    lags = np.stack([g.ravel() for g in grids], axis=1)
    return len({canonical_lag(h) for h in lags})


def pooled_tile_loglik(batch, grid, tile_labels):
    """Exact tile-torus Gaussian log-likelihood of pooled region fits.

    For each label, the mean and the torus spectrum (mean periodogram)
    are the maximum-likelihood estimates; the aggregate log-likelihood
    sums over tiles and realizations.  Returns (log_L, q, fits) where
    fits[r] = (mean, spectrum array over the tile torus, tile count).
    """
    tile_labels = np.asarray(tile_labels, dtype=np.int64)
    if tile_labels.size != grid.N_tau:
        raise LabelError(f"{tile_labels.size} labels for {grid.N_tau} tiles")
    K = int(tile_labels.max())
    data = batch.stack()
    shape = grid.tile_shape
    N = int(np.prod(shape))
    axes = tuple(range(1, len(shape) + 1))
    total_ll = 0.0
    fits = {}
    for r in range(1, K + 1):
        tids = np.flatnonzero(tile_labels == r)
        if tids.size == 0:
            raise LabelError(f"label {r} has no tiles")
        blocks = np.stack([data[:, grid.tile_sites[t]] for t in tids], axis=1)
        blocks = blocks.reshape((batch.T * tids.size,) + shape)
        m_r = float(blocks.mean())
        spec = np.abs(np.fft.fftn(blocks - m_r, axes=axes)) ** 2 / N
        lam = spec.reshape(blocks.shape[0], N).mean(axis=0)
        floor = max(lam.max() * 1e-12, 1e-300)
        lam_f = np.maximum(lam, floor)
        quad = float((lam / lam_f).sum()) * blocks.shape[0]
        total_ll += -0.5 * (
            blocks.shape[0] * N * math.log(2.0 * math.pi)
            + blocks.shape[0] * float(np.log(lam_f).sum())
            + quad
        )
        fits[r] = (m_r, lam, int(tids.size))
    q = K * (1 + _canonical_lag_count(shape))
    return float(total_ll), int(q), fits


def cluster_tiles(descriptors, K_range, batch, grid, seed=0):
    """K-means over tile descriptors with BIC-based choice of K.

    Returns (tile labels 1..K, chosen K, trace), where the trace lists
    (K, log_L, q, bic) for every K tried.  Labels are canonicalized by
    first occurrence so runs are reproducible.
    """
    K_range = sorted(set(int(K) for K in K_range))
    if not K_range or K_range[0] < 1:
        raise ConfigError("K_range must contain integers >= 1")
    n_tiles = len(descriptors)
    if n_tiles < K_range[-1]:
        raise SizeError(f"{n_tiles} tiles cannot support K up to {K_range[-1]}")
    feats = descriptor_matrix(descriptors)
    best = None
    trace = []
    for K in K_range:
        if K == 1:
            labels = np.ones(n_tiles, dtype=np.int64)
        else:
            km = KMeans(
                n_clusters=K,
                n_init=10,
                random_state=substream_u32(seed, TAG_FIT, K),
            ).fit(feats)
            labels = _canonical_labels(km.labels_)
        k_eff = int(labels.max())
        ll, q, _ = pooled_tile_loglik(batch, grid, labels)
        bic = -2.0 * ll + q * math.log(batch.T)
        trace.append({"K": K, "K_effective": k_eff, "log_L": ll, "q": q, "bic": bic})
        if best is None or bic < best[0] - 1e-12:
            best = (bic, labels, k_eff, ll, q)
    _, labels, chosen_K, ll, q = best
    return labels, chosen_K, trace


def _canonical_labels(raw):
    """Relabel clusters 1..K in order of first appearance."""
    raw = np.asarray(raw)
    mapping = {}
    out = np.empty(raw.size, dtype=np.int64)
    for i, v in enumerate(raw):
        if v not in mapping:
            mapping[v] = len(mapping) + 1
        out[i] = mapping[v]
    return out


def _site_labels(grid, tile_labels):
    """Per-site labels: tiles carry their label; margin sites take the
    label of the nearest tile centroid (ties to the lowest tile id)."""
    lattice = grid.lattice
    labels = np.zeros(lattice.n, dtype=np.int64)
    for tid, flat in enumerate(grid.tile_sites):
        labels[flat] = tile_labels[tid]
    if grid.margin_sites.size:
        coords = lattice.site_coords()
        centroids = grid.tile_origins + (grid.k - 1) / 2.0
        margin_coords = coords[grid.margin_sites]
        d2 = ((margin_coords[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        nearest = d2.argmin(axis=1)
        labels[grid.margin_sites] = tile_labels[nearest]
    return labels


def fit_region_models(batch, grid, tile_labels):
    """Pool tiles per label into region models; returns a PiecewiseField.

    The pooled torus spectrum is nonnegative by construction (it is a
    mean periodogram), so the synthesized tabulated kernel is PSD on the
    tile torus.
    """
    tile_labels = np.asarray(tile_labels, dtype=np.int64)
    _, _, fits = pooled_tile_loglik(batch, grid, tile_labels)
    K = int(tile_labels.max())
    site_labels = _site_labels(grid, tile_labels)
    partition = Partition.from_labels(site_labels, K=K)
    shape = grid.tile_shape
    N = int(np.prod(shape))

    margin_labels = site_labels[grid.margin_sites]
    regions = []
    for r in range(1, K + 1):
        m_r, lam, n_tiles = fits[r]
        autocov = np.fft.ifftn(lam.reshape(shape)).real
        variance = float(autocov[(0,) * len(shape)])
        axes = [np.where(np.arange(m) <= m // 2, np.arange(m), np.arange(m) - m) for m in shape]
        grids_ = np.meshgrid(*axes, indexing="ij")
        lag_list = np.stack([g.ravel() for g in grids_], axis=1)
        table = {}
        for h, v in zip(lag_list, autocov.ravel()):
            table[canonical_lag(h)] = float(v)
        kernel = CovarianceKernel("tabulated", variance, table=table)
        margin = int((margin_labels == r).sum())
        spectrum = np.concatenate([np.tile(lam, n_tiles), np.full(margin, variance)])
        spectrum = np.sort(np.maximum(spectrum, 0.0))[::-1]
        regions.append(
            RegionModel(
                mean=m_r,
                kernel=kernel,
                spectrum=spectrum,
                spectrum_method="bccb",
                tile_shape=shape,
                margin_sites=margin,
            )
        )
    return PiecewiseField(lattice=grid.lattice, partition=partition, regions=tuple(regions))


@dataclass(frozen=True)
class FitResult:
    field: PiecewiseField
    grid: TileGrid
    tile_labels: np.ndarray
    chosen_K: int
    trace: tuple
    log_L: float
    q: int


def fit_pipeline(batch, k, K_range, seed=0):
    """tile_partition -> descriptors -> cluster -> pooled region fit."""
    lattice = batch.fields[0].lattice
    grid = tile_partition(lattice, k)
    descriptors = tile_descriptors(batch, grid)
    labels, chosen_K, trace = cluster_tiles(descriptors, K_range, batch, grid, seed=seed)
    field = fit_region_models(batch, grid, labels)
    chosen = trace[0]
    for t in trace[1:]:
        if t["bic"] < chosen["bic"] - 1e-12:
            chosen = t
    return FitResult(
        field=field,
        grid=grid,
        tile_labels=labels,
        chosen_K=chosen_K,
        trace=tuple(trace),
        log_L=chosen["log_L"],
        q=chosen["q"],
    )


def write_label_pgm(field, path):
    """Grayscale label map (ASCII PGM); 3-d fields use the middle slice."""
    labels = field.partition.labels.reshape(field.lattice.dims)
    if labels.ndim == 3:
        labels = labels[labels.shape[0] // 2]
    K = max(1, field.partition.K)
    gray = np.round(255.0 * labels / K).astype(int)
    lines = ["P2", f"{gray.shape[1]} {gray.shape[0]}", "255"]
    for row in gray:
        lines.append(" ".join(str(v) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
