"""Statistical validation of the piecewise homogeneous model.

Two procedures operate on a batch of field realizations:

* random-probe Gaussianity testing — sparse random linear functionals of
  each realization are Shapiro-Wilk tested across realizations, with
  Benjamini-Hochberg multiplicity control; the probe rejection rate
  decides the Gaussian hypothesis;
* second-order summaries — empirical mean field, FFT (circular)
  autocovariance, radial profile over annuli, and threshold-based
  stationarity / isotropy flags.

Candidate models are compared by AIC/BIC at a common effective sample
size n_eff = T.  Gaussian field candidates are scored with the exact
torus (Whittle) likelihood evaluated tile by tile, so the global
homogeneous field is literally the piecewise candidate with K = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import shapiro as _scipy_shapiro

from .distortion import FieldArray
from .errors import ConfigError, DegenerateSample, DomainError, SizeError
from .streams import TAG_PROBE, substream

SW_MIN, SW_MAX = 3, 5000


@dataclass(frozen=True)
class ProbeSet:
    """Fixed sparse probes: site indices and signed weights, one row each."""

    supports: np.ndarray  # (J, s) flat site indices
    weights: np.ndarray  # (J, s)

    @property
    def J(self):
        return self.supports.shape[0]


def random_probes(batch, J, probe_support_size=64, seed=0):
    """Draw J sparse probes and apply them to every realization.

    Each probe has ``probe_support_size`` distinct sites (capped at the
    lattice size) with i.i.d. +-1/sqrt(support) weights; the same probes
    are applied to all realizations.  Returns (ProbeSet, responses) with
    responses of shape (T, J).
    """
    J = int(J)
    if J < 1:
        raise ConfigError("J must be >= 1")
    n = batch.fields[0].lattice.n
    s = int(probe_support_size)
    if s < 1:
        raise ConfigError("probe support size must be >= 1")
    if s > n:
        raise ConfigError(f"probe support {s} exceeds lattice size {n}")
    rng = substream(seed, TAG_PROBE)
    supports = np.empty((J, s), dtype=np.int64)
    for j in range(J):
        supports[j] = rng.choice(n, size=s, replace=False)
    weights = rng.choice((-1.0, 1.0), size=(J, s)) / math.sqrt(s)
    probes = ProbeSet(supports=supports, weights=weights)
    return probes, apply_probes(probes, batch)


def apply_probes(probes, batch):
    """Responses y[t, j] = sum_i w[j, i] * X_t[support[j, i]]."""
    data = batch.stack()
    return np.stack(
        [data[:, probes.supports[j]] @ probes.weights[j] for j in range(probes.J)],
        axis=1,
    )


def shapiro_wilk(sample):
    """Shapiro-Wilk W and its Royston-approximation p-value."""
    x = np.asarray(sample, dtype=np.float64).ravel()
    if not (SW_MIN <= x.size <= SW_MAX):
        raise SizeError(f"Shapiro-Wilk needs {SW_MIN}..{SW_MAX} observations, got {x.size}")
    if np.ptp(x) == 0.0:
        raise DegenerateSample("sample has zero variance")
    res = _scipy_shapiro(x)
    return float(res.statistic), float(res.pvalue)


def benjamini_hochberg(p_values, alpha=0.05):
    """Step-up BH adjustment.

    Adjusted values are p~(k) = min_{j >= k} m p_(j) / j, clamped to 1;
    the mask rejects where the adjusted value is at most alpha.
    """
    p = np.asarray(p_values, dtype=np.float64).ravel()
    if p.size == 0:
        return p.copy(), np.zeros(0, dtype=bool)
    if (p < 0).any() or (p > 1).any():
        raise DomainError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    adjusted_sorted = np.minimum(1.0, np.minimum.accumulate(ranked[::-1])[::-1])
    adjusted = np.empty_like(p)
    adjusted[order] = adjusted_sorted
    return adjusted, adjusted <= alpha


@dataclass(frozen=True)
class ProbeReport:
    J: int
    p_values: np.ndarray
    p_bh: np.ndarray
    pi_hat: float
    alpha: float
    delta: float
    decision: str  # gaussian_consistent | gaussian_rejected
    excluded_probes: tuple = ()


def gaussianity_decision(batch, J, alpha=0.05, delta=0.05, probe_support_size=64, seed=0):
    """Random-probe Gaussianity test on a batch.

    Probes with degenerate response sequences are excluded and reported;
    pi_hat is the BH rejection fraction among the tested probes, and the
    hypothesis is rejected when pi_hat > delta.
    """
    if batch.T < SW_MIN:
        raise SizeError(f"need at least {SW_MIN} realizations, got {batch.T}")
    _, responses = random_probes(batch, J, probe_support_size, seed)
    p_raw = []
    excluded = []
    for j in range(responses.shape[1]):
        try:
            _, p = shapiro_wilk(responses[:, j])
            p_raw.append(p)
        except DegenerateSample:
            excluded.append(j)
    p_raw = np.asarray(p_raw)
    if p_raw.size == 0:
        raise DegenerateSample("all probe responses are degenerate")
    p_bh, reject = benjamini_hochberg(p_raw, alpha)
    pi_hat = float(reject.mean())
    return ProbeReport(
        J=int(p_raw.size),
        p_values=p_raw,
        p_bh=p_bh,
        pi_hat=pi_hat,
        alpha=float(alpha),
        delta=float(delta),
        decision="gaussian_rejected" if pi_hat > delta else "gaussian_consistent",
        excluded_probes=tuple(excluded),
    )


def _signed_lag_radii(dims):
    axes = [np.where(np.arange(m) <= m // 2, np.arange(m), np.arange(m) - m) for m in dims]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.sqrt(sum(g.astype(np.float64) ** 2 for g in grids))


@dataclass(frozen=True)
class SecondOrderReport:
    mean_field: FieldArray
    autocov: np.ndarray  # lag-indexed, FFT (circular) convention
    radial_profile: tuple  # (l, C_bar(l), bin count)
    stationarity_flag: bool
    isotropy_flag: bool
    stats: dict


def empirical_second_order(batch, stationarity_threshold=0.1, isotropy_threshold=0.1):
    """Empirical mean field, circular autocovariance, radial profile, and
    stationarity / isotropy assessments.

    The autocovariance is the inverse FFT of the mean periodogram of the
    mean-centered realizations, so lags are circular (torus) lags.  Flags
    are threshold calls, reported next to the statistics that back them.
    """
    if batch.T < 2:
        raise SizeError("second-order estimation needs T >= 2")
    lattice = batch.fields[0].lattice
    dims = lattice.dims
    data = batch.stack().reshape((batch.T,) + dims)
    mu = data.mean(axis=0)
    centered = data - mu[None]
    n = lattice.n
    periodogram = np.zeros(dims)
    for t in range(batch.T):
        f = np.fft.fftn(centered[t])
        periodogram += (f * f.conj()).real
    periodogram /= batch.T
    autocov = np.fft.ifftn(periodogram).real / n

    radii = _signed_lag_radii(dims)
    bins = np.floor(radii).astype(np.int64)
    n_bins = int(bins.max()) + 1
    counts = np.bincount(bins.ravel(), minlength=n_bins)
    sums = np.bincount(bins.ravel(), weights=autocov.ravel(), minlength=n_bins)
    radial = tuple(
        (int(l), float(sums[l] / counts[l]), int(counts[l])) for l in range(n_bins)
    )

    c0 = float(autocov[(0,) * len(dims)])
    mean_spread = float(mu.std())
    pooled_sd = math.sqrt(max(c0, 0.0))
    stationary = mean_spread <= stationarity_threshold * pooled_sd if pooled_sd > 0 else True

    if len(dims) == 2:
        directions = ((0, 1), (1, 0), (1, 1), (1, -1))
    else:
        directions = ((0, 0, 1), (0, 1, 0), (1, 0, 0), (1, 1, 1))
    max_steps = max(1, min(dims) // 2 - 1)
    radial_arr = np.array([v for _, v, _ in radial])
    worst = 0.0
    for d in directions:
        for step in range(1, max_steps + 1):
            lag = tuple((step * c) % m for c, m in zip(d, dims))
            r = step * math.sqrt(sum(c * c for c in d))
            l = int(r)
            if l >= n_bins:
                break
            worst = max(worst, abs(float(autocov[lag]) - float(radial_arr[l])))
    isotropic = worst <= isotropy_threshold * c0 if c0 > 0 else True

    return SecondOrderReport(
        mean_field=FieldArray(lattice=lattice, values=mu.ravel()),
        autocov=autocov,
        radial_profile=radial,
        stationarity_flag=bool(stationary),
        isotropy_flag=bool(isotropic),
        stats={
            "c0": c0,
            "mean_field_sd": mean_spread,
            "pooled_sd": pooled_sd,
            "stationarity_threshold": float(stationarity_threshold),
            "max_directional_deviation": worst,
            "isotropy_threshold": float(isotropy_threshold),
        },
    )


def aic_bic(log_L, q, n_eff):
    """AIC = -2 log L + 2q; BIC = -2 log L + q ln(n_eff)."""
    if n_eff < 1:
        raise DomainError("n_eff must be >= 1")
    return -2.0 * log_L + 2.0 * q, -2.0 * log_L + q * math.log(n_eff)


@dataclass(frozen=True)
class ModelScore:
    model_id: str
    q: int
    log_L: float
    aic: float
    bic: float
    n_eff: int
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ModelSelectionResult:
    scores: tuple  # ModelScore, ranked by AIC ascending
    excluded: tuple  # (model_id, reason)

    def ranked(self, criterion="aic"):
        return tuple(sorted(self.scores, key=lambda s: (getattr(s, criterion), s.model_id)))

    def score(self, model_id):
        for s in self.scores:
            if s.model_id == model_id:
                return s
        raise KeyError(model_id)


DEFAULT_CANDIDATES = (
    "piecewise",
    "global_gaussian_field",
    "gaussian_process_1d",
    "gaussian_iid",
    "laplace_iid",
    "poisson_iid",
)


def _iid_scores(data, T):
    """Closed-form marginal-model fits; returns [(id, q, logL)] and exclusions."""
    x = data.ravel()
    m = x.size
    out = []
    excluded = []

    mu = x.mean()
    var = x.var()
    if var > 0:
        ll = -0.5 * m * (math.log(2.0 * math.pi * var) + 1.0)
        out.append(("gaussian_iid", 2, ll))
    else:
        excluded.append(("gaussian_iid", "zero-variance data"))

    loc = float(np.median(x))
    b = float(np.abs(x - loc).mean())
    if b > 0:
        ll = -m * math.log(2.0 * b) - float(np.abs(x - loc).sum()) / b
        out.append(("laplace_iid", 2, ll))
    else:
        excluded.append(("laplace_iid", "zero-dispersion data"))

    if (x >= 0).all() and np.abs(x - np.round(x)).max() <= 1e-9:
        from scipy.special import gammaln

        counts = np.round(x)
        lam = counts.mean()
        if lam > 0:
            ll = float((counts * math.log(lam) - lam - gammaln(counts + 1.0)).sum())
            out.append(("poisson_iid", 1, ll))
        else:
            excluded.append(("poisson_iid", "all-zero data"))
    else:
        excluded.append(("poisson_iid", "inapplicable: non-count data"))
    return out, excluded


def model_selection(batch, candidates=DEFAULT_CANDIDATES, tile_size=8, K_range=(1, 2, 3, 4), seed=0):
    """Fit and rank candidate models by AIC/BIC with n_eff = T.

    Gaussian field candidates share the tile-torus likelihood machinery,
    which makes ``global_gaussian_field`` the K = 1 special case of
    ``piecewise``.  Inapplicable candidates are excluded with a reason.
    """
    from . import tiling

    if batch.T < 2:
        raise SizeError("model selection needs T >= 2")
    data = batch.stack()
    T = batch.T
    scores = []
    excluded = []

    iid, iid_excluded = _iid_scores(data, T)
    wanted = set(candidates)
    for model_id, q, ll in iid:
        if model_id in wanted:
            aic, bic = aic_bic(ll, q, T)
            scores.append(ModelScore(model_id, q, ll, aic, bic, T))
    excluded.extend(e for e in iid_excluded if e[0] in wanted)

    lattice = batch.fields[0].lattice
    grid = None
    if {"piecewise", "global_gaussian_field"} & wanted:
        grid = tiling.tile_partition(lattice, tile_size)

    if "global_gaussian_field" in wanted:
        ones = np.ones(grid.N_tau, dtype=np.int64)
        ll, q, _ = tiling.pooled_tile_loglik(batch, grid, ones)
        aic, bic = aic_bic(ll, q, T)
        scores.append(ModelScore("global_gaussian_field", q, ll, aic, bic, T))

    if "piecewise" in wanted:
        fit = tiling.fit_pipeline(batch, tile_size, K_range, seed=seed)
        aic, bic = aic_bic(fit.log_L, fit.q, T)
        scores.append(
            ModelScore(
                "piecewise",
                fit.q,
                fit.log_L,
                aic,
                bic,
                T,
                extras={"K": fit.chosen_K},
            )
        )

    if "gaussian_process_1d" in wanted:
        L = tile_size ** lattice.d
        ll, q = _grp_1d_loglik(data, L)
        if ll is None:
            excluded.append(("gaussian_process_1d", "fewer sites than one segment"))
        else:
            aic, bic = aic_bic(ll, q, T)
            scores.append(ModelScore("gaussian_process_1d", q, ll, aic, bic, T))

    ranked = tuple(sorted(scores, key=lambda s: (s.aic, s.model_id)))
    return ModelSelectionResult(scores=ranked, excluded=tuple(excluded))


def _grp_1d_loglik(data, L):
    """Whittle likelihood of the row-major flattened field, modeled as a
    stationary 1-d Gaussian process on circular segments of length L."""
    T, n = data.shape
    n_seg = n // L
    if n_seg < 1:
        return None, 0
    segs = data[:, : n_seg * L].reshape(T * n_seg, L)
    m = segs.mean()
    centered = segs - m
    spec = np.abs(np.fft.fft(centered, axis=1)) ** 2 / L
    lam = spec.mean(axis=0)
    floor = max(lam.max() * 1e-12, 1e-300)
    lam_f = np.maximum(lam, floor)
    quad = (spec / lam_f).sum()
    ll = -0.5 * (
        segs.shape[0] * L * math.log(2.0 * math.pi)
        + segs.shape[0] * np.log(lam_f).sum()
        + quad
    )
    q = 1 + (L // 2 + 1)
    return float(ll), q
