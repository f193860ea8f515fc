"""Non-asymptotic achievability and converse bounds via Monte Carlo.

The converse evaluates, for every codebook size M and slack gamma > 0,

    P_e >= Pr{ j(X, D) >= log M + gamma } - exp(-gamma),

where j is the distortion-tilted information density.  At the
water-filling optimum j decomposes over active eigenmodes,

    j = sum_{active} [ log(lam/theta*)/2 + (Y^2/lam - 1)/2 ],

with independent Y ~ N(0, lam), so draws need one standard normal per
active mode.

The achievability bound runs the regionwise random-coding experiment:
codewords are drawn from the water-filling reproduction marginal
(independent N(0, max(lam - theta*, 0)) per decorrelated mode) and a
region fails when none of its M_r codewords lands in the distortion ball.
For M_r up to ``exact_cap`` the experiment is simulated literally (an
unbiased estimate of E[(1 - p)^{M_r}]); beyond that a plug-in estimate is
used and requires inner_samples >= 100 * M_r to keep its bias below the
reported standard error.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ._backend import kernel as _kernel
from .errors import BudgetError, ConfigError
from .streams import (
    TAG_ACH_CODE,
    TAG_ACH_OUTER,
    TAG_BALL,
    TAG_TILTED,
    substream,
    substream_u32,
    worker_slices,
)
from .waterfill import KINK_TOL, LN2, second_order_rate, solve_water_level

DEFAULT_GAMMAS = (0.5, 1.0, 2.0, 4.0, 8.0)


def _strict_active(spectrum, theta):
    spectrum = np.asarray(spectrum, dtype=np.float64)
    return (spectrum > theta) & (np.abs(spectrum - theta) > KINK_TOL * np.abs(spectrum))


@dataclass(frozen=True)
class TiltedDensityModel:
    """Active-mode decomposition of the tilted information density."""

    theta_star: float
    active_modes: tuple  # ((region, mode index, eigenvalue), ...)
    constant_part: float  # nats

    @classmethod
    def from_field(cls, field, solution):
        modes = []
        const = 0.0
        for r, region in enumerate(field.regions, start=1):
            spec = np.asarray(region.spectrum, dtype=np.float64)
            for i in np.flatnonzero(_strict_active(spec, solution.theta_star)):
                lam = float(spec[i])
                modes.append((r, int(i), lam))
                const += 0.5 * math.log(lam / solution.theta_star)
        return cls(
            theta_star=solution.theta_star,
            active_modes=tuple(modes),
            constant_part=float(const),
        )

    @property
    def n_active(self):
        return len(self.active_modes)


def tilted_density_sample(model, rng):
    """One draw of the tilted information density (nats)."""
    if model.n_active == 0:
        return float(model.constant_part)
    z = rng.standard_normal(model.n_active)
    return float(model.constant_part + 0.5 * (z * z - 1.0).sum())


def tilted_density_samples(model, n_samples, seed=0, workers=4):
    """Vectorized draws, split across derived worker streams."""
    n_samples = int(n_samples)
    if model.n_active == 0:
        return np.full(n_samples, model.constant_part)
    parts = []
    for w, count in enumerate(worker_slices(n_samples, workers)):
        rng = substream(seed, TAG_TILTED, w)
        z = rng.standard_normal((count, model.n_active))
        parts.append(model.constant_part + _kernel("tilted_fluctuation")(z))
    return np.concatenate(parts)


def gamma_grid(n, extra=DEFAULT_GAMMAS):
    """Slack grid for the converse: {log(n)/2} plus fixed values."""
    return tuple(sorted(set((0.5 * math.log(n),) + tuple(extra))))


@dataclass(frozen=True)
class ConverseBoundPoint:
    log_M: float
    bound: float
    se: float
    gamma: float


def converse_bound(
    field,
    D,
    M_grid=None,
    gamma_policy=None,
    mc_samples=100_000,
    seed=0,
    workers=4,
    solution=None,
    log_M_grid=None,
    samples=None,
):
    """Lower bound on the excess-distortion probability per codebook size.

    For each M the bound is maximized over the gamma grid and clamped to
    [0, 1]; the reported standard error is the binomial error of the tail
    probability at the maximizing gamma.
    """
    if mc_samples < 10_000 and samples is None:
        raise ConfigError("converse_bound requires mc_samples >= 1e4")
    if log_M_grid is None:
        if M_grid is None:
            raise ConfigError("provide M_grid or log_M_grid")
        log_M_grid = [math.log(m) for m in M_grid]
    if solution is None:
        solution = solve_water_level(field, D)
    if samples is None:
        model = TiltedDensityModel.from_field(field, solution)
        samples = tilted_density_samples(model, mc_samples, seed=seed, workers=workers)
    gammas = gamma_policy or gamma_grid(field.lattice.n)
    S = samples.size
    points = []
    for log_m in log_M_grid:
        best = (-math.inf, 0.0, gammas[0])
        for g in gammas:
            tail = float((samples >= log_m + g).mean())
            val = tail - math.exp(-g)
            if val > best[0]:
                best = (val, math.sqrt(tail * (1.0 - tail) / S), g)
        bound = min(1.0, max(0.0, best[0]))
        points.append(ConverseBoundPoint(log_M=float(log_m), bound=bound, se=best[1], gamma=best[2]))
    return points


def min_log_m_converse(samples, n, epsilon, gamma_policy=None):
    """Smallest log M at which the converse bound drops to epsilon.

    Exact inversion on a fixed sample: for each gamma the tail constraint
    pins an order statistic; the answer is the max over gamma.  Returns
    (log_M, se) with se from the binomial wobble of the tail level.
    """
    xs = np.sort(np.asarray(samples, dtype=np.float64))
    S = xs.size
    gammas = gamma_policy or gamma_grid(n)
    best = -math.inf
    best_se = 0.0
    for g in gammas:
        q = epsilon + math.exp(-g)
        c = int(math.floor(q * S))
        if c >= S:
            continue
        x = xs[S - 1 - c]
        cand = np.nextafter(x, math.inf) - g
        if cand > best:
            dc = max(1, int(round(math.sqrt(q * (1.0 - q) * S))))
            lo = xs[max(0, S - 1 - c - dc)]
            hi = xs[min(S - 1, S - 1 - c + dc)]
            best = cand
            best_se = 0.5 * abs(lo - hi)
    return best, best_se


def _reproduction(spectrum, theta):
    """Active mask, active eigenvalues, reproduction sds, inactive eigenvalues."""
    spec = np.asarray(spectrum, dtype=np.float64)
    act = _strict_active(spec, theta)
    lam_act = spec[act]
    sd = np.sqrt(lam_act - theta)
    return act, lam_act, sd, spec[~act]


def ball_probability(x_region, spectrum, theta_star, D_r, inner_samples, seed=0):
    """Probability that one reproduction draw lands within D_r of x_region.

    x_region holds decorrelated (eigenbasis) coordinates.  Modes with
    reproduction variance zero contribute their squared coordinates as a
    deterministic base distortion.
    """
    inner_samples = int(inner_samples)
    if inner_samples < 100:
        raise ConfigError("inner_samples must be >= 100")
    y = np.asarray(x_region, dtype=np.float64).ravel()
    spec = np.asarray(spectrum, dtype=np.float64)
    if y.size != spec.size:
        raise ConfigError("coordinates and spectrum must have equal length")
    act, _, sd, _ = _reproduction(spec, theta_star)
    y_act = np.ascontiguousarray(y[act])
    base = float((y[~act] ** 2).sum())
    budget = float(D_r) * y.size
    rng = substream(seed, TAG_BALL)
    z = rng.standard_normal((inner_samples, y_act.size))
    hits = _kernel("ball_hits")(y_act, base, budget, sd, z)
    p = hits / inner_samples
    return p, math.sqrt(p * (1.0 - p) / inner_samples)


def _region_outer_draws(spectrum, theta, n_samples, rng, block=4096):
    """Outer source draws in the eigenbasis, reduced to what the codebook
    experiment needs: active coordinates and the inactive distortion base."""
    act, lam_act, _, lam_inact = _reproduction(spectrum, theta)
    y_act = rng.standard_normal((n_samples, lam_act.size)) * np.sqrt(lam_act)[None, :]
    base = np.empty(n_samples, dtype=np.float64)
    done = 0
    while done < n_samples:
        b = min(block, n_samples - done)
        z = rng.standard_normal((b, lam_inact.size))
        base[done : done + b] = (z * z) @ lam_inact
        done += b
    return np.ascontiguousarray(y_act), base


@dataclass(frozen=True)
class RegionFailure:
    q: float
    se: float
    regime: str
    M_r: int


@dataclass(frozen=True)
class AchievabilityEstimate:
    p_e: float
    se: float
    per_region: tuple
    mc_samples: int
    inner_samples: int


def achievability_bound(
    field,
    D,
    D_alloc,
    M_alloc,
    mc_samples=100_000,
    inner_samples=1000,
    seed=0,
    workers=4,
    exact_cap=10_000,
    solution=None,
    _outer_cache=None,
):
    """Monte Carlo estimate of the random-coding excess-distortion bound.

    D_alloc, M_alloc : per-region distortion thresholds and codebook sizes.
    The regional budget sum_r w_r D_r must not exceed D.
    """
    D_alloc = [float(d) for d in D_alloc]
    M_alloc = [int(m) for m in M_alloc]
    if any(m < 1 for m in M_alloc):
        raise BudgetError("codebook sizes must be >= 1")
    weights = np.asarray(field.weights, dtype=np.float64)
    total = float(np.dot(weights, D_alloc))
    # slack covers the water-level solver's 1e-10 relative stopping rule
    if total > D * (1.0 + 1e-8) + 1e-300:
        raise BudgetError(f"allocation sums to {total!r} > D={D!r}")
    if solution is None:
        solution = solve_water_level(field, D)
    theta = solution.theta_star
    mc_samples = int(mc_samples)

    per_region = []
    for r, region in enumerate(field.regions, start=1):
        spec = np.asarray(region.spectrum, dtype=np.float64)
        n_r = spec.size
        budget = D_alloc[r - 1] * n_r
        M_r = M_alloc[r - 1]
        act, _, sd, _ = _reproduction(spec, theta)
        failures = 0.0
        plugin_sumsq = 0.0
        regime = "exact" if M_r <= exact_cap else "plugin"
        if regime == "plugin" and inner_samples < 100 * M_r:
            raise ConfigError(
                f"plug-in regime for M_r={M_r} requires inner_samples >= {100 * M_r}"
            )
        counts = worker_slices(mc_samples, workers)
        for w, count in enumerate(counts):
            if _outer_cache is not None:
                y_act, base = _outer_cache[(r, w)]
            else:
                rng = substream(seed, TAG_ACH_OUTER, r, w)
                y_act, base = _region_outer_draws(spec, theta, count, rng)
            if regime == "exact":
                kseed = substream_u32(seed, TAG_ACH_CODE, r, w)
                failures += _kernel("codebook_failures")(
                    y_act, base, budget, sd, M_r, kseed
                )
            else:
                rng_in = substream(seed, TAG_ACH_CODE, r, w)
                for i in range(count):
                    z = rng_in.standard_normal((int(inner_samples), y_act.shape[1]))
                    hits = _kernel("ball_hits")(y_act[i], base[i], budget, sd, z)
                    term = (1.0 - hits / inner_samples) ** M_r
                    failures += term
                    plugin_sumsq += term * term
        q = failures / mc_samples
        if regime == "exact":
            se = math.sqrt(max(q * (1.0 - q), 0.0) / mc_samples)
        else:
            var = max(plugin_sumsq / mc_samples - q * q, 0.0)
            se = math.sqrt(var / mc_samples)
        per_region.append(RegionFailure(q=float(q), se=float(se), regime=regime, M_r=M_r))

    success = 1.0
    for rf in per_region:
        success *= 1.0 - rf.q
    p_e = 1.0 - success
    var = 0.0
    for rf in per_region:
        other = success / (1.0 - rf.q) if rf.q < 1.0 else 0.0
        var += (other * rf.se) ** 2
    return AchievabilityEstimate(
        p_e=float(min(1.0, max(0.0, p_e))),
        se=float(math.sqrt(var)),
        per_region=tuple(per_region),
        mc_samples=mc_samples,
        inner_samples=int(inner_samples),
    )


def allocate_codebooks(field, solution, log_M_total):
    """Split a total log codebook size across regions proportionally to
    each region's share n_r R_r of the first-order rate, rounding up."""
    shares = np.array(
        [region.spectrum.size * alloc.R_r for region, alloc in zip(field.regions, solution.per_region)],
        dtype=np.float64,
    )
    total = shares.sum()
    if total <= 0:
        shares = np.ones_like(shares)
        total = shares.sum()
    logs = log_M_total * shares / total
    return [max(1, int(math.ceil(math.exp(min(l, 700.0)) - 1e-12))) for l in logs]


@dataclass(frozen=True)
class BoundConfig:
    """Monte Carlo budgets and search controls for bound evaluation."""

    mc_samples: int = 100_000
    inner_samples: int = 1000
    seed: int = 0
    workers: int = 4
    epsilon: float = 0.05
    rate_tol_bits: float = 0.005
    # the curve search keeps the unbiased codebook simulation for all M_r
    # (early exit bounds its cost); lower this to exercise the plug-in path
    exact_cap: int = 100_000_000
    gamma_extra: tuple = DEFAULT_GAMMAS
    max_expand_nats: float = 60.0

    def to_json_dict(self):
        return {
            "mc_samples": self.mc_samples,
            "inner_samples": self.inner_samples,
            "seed": self.seed,
            "workers": self.workers,
            "epsilon": self.epsilon,
            "rate_tol_bits": self.rate_tol_bits,
            "exact_cap": self.exact_cap,
            "gamma_extra": list(self.gamma_extra),
            "max_expand_nats": self.max_expand_nats,
        }

    @classmethod
    def from_json_dict(cls, d):
        kwargs = dict(d)
        if "gamma_extra" in kwargs:
            kwargs["gamma_extra"] = tuple(kwargs["gamma_extra"])
        return cls(**kwargs)


@dataclass(frozen=True)
class BoundPoint:
    n: int
    rate_ach: float  # bits/site
    rate_conv: float  # bits/site
    rate_approx: float  # bits/site
    se_conv: float  # bits/site
    se_ach: float  # bits/site
    samples: tuple  # (mc_samples, inner_samples)


def _search_achievability(field, D, solution, epsilon, config, approx_log_m=None):
    """Binary search for the smallest total log M with bound <= epsilon.

    Outer source draws are generated once and shared across search steps;
    codeword streams are fixed per region.  The expansion starts at the
    second-order approximation plus a log(n)/2 margin, the regime the
    crossing is expected in.
    """
    n = field.lattice.n
    theta = solution.theta_star
    cache = {}
    counts = worker_slices(config.mc_samples, config.workers)
    for r, region in enumerate(field.regions, start=1):
        spec = np.asarray(region.spectrum, dtype=np.float64)
        for w, count in enumerate(counts):
            rng = substream(config.seed, TAG_ACH_OUTER, r, w)
            cache[(r, w)] = _region_outer_draws(spec, theta, count, rng)

    evals = []

    def p_e(log_m):
        alloc = allocate_codebooks(field, solution, log_m)
        est = achievability_bound(
            field,
            D,
            [a.D_r for a in solution.per_region],
            alloc,
            mc_samples=config.mc_samples,
            inner_samples=config.inner_samples,
            seed=config.seed,
            workers=config.workers,
            exact_cap=config.exact_cap,
            solution=solution,
            _outer_cache=cache,
        )
        evals.append((log_m, est))
        return est

    base = max(n * solution.rate_pw, 0.0)
    start = max(1.0, 0.5 * math.log(max(n, 2)))
    if approx_log_m is not None:
        start = max(start, approx_log_m - base + 0.5 * math.log(max(n, 2)))
    offset = start
    hi = base + offset
    while p_e(hi).p_e > epsilon:
        offset *= 2.0
        if offset > config.max_expand_nats:
            raise RuntimeError(
                f"achievability bound stays above epsilon within "
                f"{config.max_expand_nats} nats of nR_pw"
            )
        hi = base + offset
    lo = max(base + offset / 2.0, 0.0) if offset > start else 0.0
    if lo > 0 and p_e(lo).p_e <= epsilon:
        hi = lo
        lo = 0.0

    tol_nats = config.rate_tol_bits * LN2 * n
    while hi - lo > tol_nats:
        mid = 0.5 * (lo + hi)
        if p_e(mid).p_e <= epsilon:
            hi = mid
        else:
            lo = mid

    final = min((e for e in evals if e[0] >= hi - 1e-12), key=lambda e: e[0])
    below = [e for e in evals if e[1].p_e > epsilon]
    slope = None
    if below:
        lo_eval = max(below, key=lambda e: e[0])
        dp = lo_eval[1].p_e - final[1].p_e
        dm = final[0] - lo_eval[0]
        if dp > 0 and dm > 0:
            slope = dp / dm
    se_nats = 0.5 * (hi - lo)
    if slope:
        se_nats += final[1].se / slope
    return hi, se_nats, final[1]


def bound_curve(fields, D, epsilon, config=None):
    """Achievability / converse / second-order rates across a lattice family.

    fields : sequence of PiecewiseField with identical region weights,
        ordered by size (the proportional-growth regime).
    """
    config = config or BoundConfig(epsilon=epsilon)
    if config.epsilon != epsilon:
        config = replace(config, epsilon=epsilon)
    points = []
    for field in fields:
        n = field.lattice.n
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            solution = solve_water_level(field, D)
            approx = second_order_rate(field, D, epsilon, solution=solution)

        model = TiltedDensityModel.from_field(field, solution)
        samples = tilted_density_samples(
            model, config.mc_samples, seed=config.seed, workers=config.workers
        )
        log_m_conv, se_conv_nats = min_log_m_converse(
            samples, n, epsilon, gamma_grid(n, config.gamma_extra)
        )
        log_m_conv = max(log_m_conv, 0.0)

        log_m_ach, se_ach_nats, _ = _search_achievability(
            field, D, solution, epsilon, config, approx_log_m=approx.log_M_nats
        )

        points.append(
            BoundPoint(
                n=n,
                rate_ach=float(log_m_ach / n / LN2),
                rate_conv=float(log_m_conv / n / LN2),
                rate_approx=float(approx.rate_bits_per_site),
                se_conv=float(se_conv_nats / n / LN2),
                se_ach=float(se_ach_nats / n / LN2),
                samples=(config.mc_samples, config.inner_samples),
            )
        )
    return points


BOUND_CSV_COLUMNS = (
    "n,rate_conv_bits,rate_ach_bits,rate_approx_bits,se_conv,se_ach,epsilon,D,seed"
)


def write_bound_curve_csv(points, path, epsilon, D, seed):
    lines = [BOUND_CSV_COLUMNS]
    for p in points:
        lines.append(
            ",".join(
                format(v, ".12g")
                for v in (
                    p.n,
                    p.rate_conv,
                    p.rate_ach,
                    p.rate_approx,
                    p.se_conv,
                    p.se_ach,
                    epsilon,
                    D,
                    seed,
                )
            )
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
