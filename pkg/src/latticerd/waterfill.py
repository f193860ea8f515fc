"""Regionwise reverse water-filling, dispersion, and the second-order rate.

A single water level ``theta*`` equalizes the marginal rate-distortion
slope ``-1/(2 theta)`` across regions.  At level theta a region with
eigenvalues ``lam_i`` contributes

    D_r(theta) = mean_i min(lam_i, theta)
    R_r(theta) = mean_i [log(lam_i / theta)]+ / 2      (nats/site)

and theta* solves ``sum_r w_r D_r(theta*) = D``.  Every eigenmode above
the water level ("active") adds exactly 1/2 to the dispersion.

Rates are carried in nats internally; bits appear only at the reporting
surface (columns suffixed ``_bits``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from ._backend import kernel as _kernel
from .errors import DistortionOutOfRange, DomainError, SizeError, SpectralKinkWarning

#: relative distance to an eigenvalue below which theta* sits on a kink
KINK_TOL = 1e-9

LN2 = math.log(2.0)


def region_distortion_at_level(spectrum, theta):
    """Distortion a region incurs at water level theta."""
    spectrum = np.asarray(spectrum, dtype=np.float64)
    if spectrum.size == 0:
        raise SizeError("empty spectrum")
    if theta <= 0:
        raise DomainError("water level must be positive")
    smin, _, _ = _kernel("waterfill_sums")(spectrum, float(theta))
    return smin / spectrum.size


def region_rate_at_level(spectrum, theta):
    """Per-site rate (nats) a region requires at water level theta."""
    spectrum = np.asarray(spectrum, dtype=np.float64)
    if spectrum.size == 0:
        raise SizeError("empty spectrum")
    if theta <= 0:
        raise DomainError("water level must be positive")
    _, srate, _ = _kernel("waterfill_sums")(spectrum, float(theta))
    return srate / (2.0 * spectrum.size)


@dataclass(frozen=True)
class RegionAllocation:
    D_r: float
    R_r: float
    active_count: int


@dataclass(frozen=True)
class WaterfillSolution:
    theta_star: float
    per_region: tuple
    rate_pw: float  # nats/site
    dispersion: float
    total_D: float
    kink_modes: tuple = ()


def _budget(field, theta):
    total = 0.0
    for w, region in zip(field.weights, field.regions):
        smin, _, _ = _kernel("waterfill_sums")(region.spectrum, float(theta))
        total += w * smin / region.spectrum.size
    return total


def solve_water_level(field, D, rel_tol=1e-10, max_iter=200):
    """Find the global water level for a target distortion D.

    Bisection on the monotone map theta -> sum_r w_r D_r(theta), bracketed
    by [1e-6 * min positive eigenvalue, max eigenvalue].  Emits
    SpectralKinkWarning when theta* lands within KINK_TOL of an eigenvalue;
    such modes are counted inactive.
    """
    D = float(D)
    spectra = [np.asarray(r.spectrum, dtype=np.float64) for r in field.regions]
    for spec in spectra:
        if spec.size == 0:
            raise SizeError("empty spectrum")
    weights = np.asarray(field.weights, dtype=np.float64)
    variance_level = float(sum(w * s.mean() for w, s in zip(weights, spectra)))
    if not (0.0 < D < variance_level):
        raise DistortionOutOfRange(
            f"D={D!r} outside (0, {variance_level!r}) for this field"
        )

    positive = np.concatenate([s[s > 0] for s in spectra])
    lo = positive.min() * 1e-6
    hi = max(s.max() for s in spectra)
    theta = 0.5 * (lo + hi)
    for _ in range(max_iter):
        theta = 0.5 * (lo + hi)
        total = _budget(field, theta)
        if abs(total - D) <= rel_tol * D:
            break
        if total < D:
            lo = theta
        else:
            hi = theta

    kinks = []
    for r, spec in enumerate(spectra, start=1):
        near = np.abs(spec - theta) <= KINK_TOL * np.abs(spec)
        for i in np.flatnonzero(near):
            kinks.append((r, int(i), float(spec[i])))
    if kinks:
        warnings.warn(
            f"water level {theta!r} within {KINK_TOL} of {len(kinks)} eigenvalue(s); "
            "dispersion is unreliable at spectral kinks",
            SpectralKinkWarning,
            stacklevel=2,
        )

    per_region = []
    total_D = 0.0
    rate_pw = 0.0
    active_total = 0
    for w, spec in zip(weights, spectra):
        smin, srate, _ = _kernel("waterfill_sums")(spec, theta)
        strictly_active = (spec > theta) & (np.abs(spec - theta) > KINK_TOL * np.abs(spec))
        count = int(strictly_active.sum())
        d_r = smin / spec.size
        r_r = srate / (2.0 * spec.size)
        per_region.append(RegionAllocation(D_r=d_r, R_r=r_r, active_count=count))
        total_D += w * d_r
        rate_pw += w * r_r
        active_total += count

    return WaterfillSolution(
        theta_star=float(theta),
        per_region=tuple(per_region),
        rate_pw=float(rate_pw),
        dispersion=0.5 * active_total,
        total_D=float(total_D),
        kink_modes=tuple(kinks),
    )


@dataclass(frozen=True)
class DispersionReport:
    total: float
    per_region: tuple


def dispersion(field, solution):
    """Closed-form dispersion: 1/2 per active eigenmode, split by region."""
    if solution.kink_modes:
        warnings.warn(
            f"dispersion evaluated at a spectral kink ({len(solution.kink_modes)} mode(s))",
            SpectralKinkWarning,
            stacklevel=2,
        )
    per_region = tuple(0.5 * alloc.active_count for alloc in solution.per_region)
    return DispersionReport(total=float(sum(per_region)), per_region=per_region)


def q_inverse(epsilon):
    """Inverse Gaussian tail function: y with Q(y) = epsilon."""
    epsilon = float(epsilon)
    if not (0.0 < epsilon < 1.0):
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    return float(-ndtri(epsilon)) + 0.0


@dataclass(frozen=True)
class SecondOrderRate:
    log_M_nats: float
    rate_nats_per_site: float
    rate_bits_per_site: float
    rate_pw: float
    v_pw: float
    dispersion_term_dropped: bool = False


def second_order_rate(field, D, epsilon, solution=None):
    """Second-order codebook-size expansion at excess probability epsilon.

    log M = n R_pw(D) + sqrt(V_pw(D)) Qinv(epsilon); the unresolved
    O(log n) remainder is omitted.  When V_pw = 0 the dispersion term is
    dropped with a warning.
    """
    epsilon = float(epsilon)
    if not (0.0 < epsilon < 1.0):
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    if solution is None:
        solution = solve_water_level(field, D)
    n = field.lattice.n
    v = solution.dispersion
    dropped = False
    if v > 0:
        log_m = n * solution.rate_pw + math.sqrt(v) * q_inverse(epsilon)
    else:
        warnings.warn("V_pw = 0: dispersion term dropped", stacklevel=2)
        log_m = n * solution.rate_pw
        dropped = True
    rate = log_m / n
    return SecondOrderRate(
        log_M_nats=float(log_m),
        rate_nats_per_site=float(rate),
        rate_bits_per_site=float(rate / LN2),
        rate_pw=solution.rate_pw,
        v_pw=float(v),
        dispersion_term_dropped=dropped,
    )


@dataclass(frozen=True)
class RDPoint:
    D: float
    theta_star: float
    rate_nats_per_site: float
    rate_bits_per_site: float
    dispersion: float
    second_order_rate_bits_per_site: float
    status: str


def rd_curve(field, D_grid, epsilon):
    """Evaluate the rate-distortion curve over a distortion grid.

    Infeasible grid points are reported with a status instead of raising.
    """
    points = []
    for D in D_grid:
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                sol = solve_water_level(field, D)
                so = second_order_rate(field, D, epsilon, solution=sol)
            status = "ok"
            if any(issubclass(w.category, SpectralKinkWarning) for w in caught):
                status = "kink"
            points.append(
                RDPoint(
                    D=float(D),
                    theta_star=sol.theta_star,
                    rate_nats_per_site=sol.rate_pw,
                    rate_bits_per_site=sol.rate_pw / LN2,
                    dispersion=sol.dispersion,
                    second_order_rate_bits_per_site=so.rate_bits_per_site,
                    status=status,
                )
            )
        except (DistortionOutOfRange, SizeError) as exc:
            points.append(
                RDPoint(
                    D=float(D),
                    theta_star=math.nan,
                    rate_nats_per_site=math.nan,
                    rate_bits_per_site=math.nan,
                    dispersion=math.nan,
                    second_order_rate_bits_per_site=math.nan,
                    status=f"infeasible: {exc}",
                )
            )
    return points


RD_CSV_COLUMNS = (
    "D,theta_star,rate_nats_per_site,rate_bits_per_site,"
    "dispersion,second_order_rate_bits_per_site,status"
)


def _fmt(x):
    return "" if (isinstance(x, float) and math.isnan(x)) else format(x, ".12g")


def write_rd_curve_csv(points, path):
    """Emit the curve with the documented column layout."""
    lines = [RD_CSV_COLUMNS]
    for p in points:
        lines.append(
            ",".join(
                [
                    _fmt(p.D),
                    _fmt(p.theta_star),
                    _fmt(p.rate_nats_per_site),
                    _fmt(p.rate_bits_per_site),
                    _fmt(p.dispersion),
                    _fmt(p.second_order_rate_bits_per_site),
                    '"%s"' % p.status.replace('"', "'"),
                ]
            )
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
