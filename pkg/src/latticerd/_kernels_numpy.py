"""Pure-numpy implementations of the hot numeric kernels.

Selected when the ``LATTICERD_BACKEND=numpy`` environment flag is set or
numba is unavailable.  Signatures are shared with
:mod:`latticerd._kernels_numba`; see :mod:`latticerd._backend` for dispatch.
"""

import math

import numpy as np


def sse_total(a, b):
    """Compensated sum of squared differences.

    Uses fsum, which is exact for float64 inputs; the numba twin uses Kahan
    accumulation.
    """
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return math.fsum((d * d).tolist())


def sse_by_region(a, b, labels, n_regions):
    """Per-region compensated sums of squared differences.

    labels are 0-based region indices aligned with a/b.
    """
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    sq = d * d
    out = np.zeros(n_regions, dtype=np.float64)
    for r in range(n_regions):
        out[r] = math.fsum(sq[labels == r].tolist())
    return out


def waterfill_sums(spectrum, theta):
    """One pass over a spectrum at water level theta.

    Returns (sum of min(lam, theta), sum of log(lam/theta) over lam > theta,
    active count).
    """
    lam = np.asarray(spectrum, dtype=np.float64)
    smin = float(np.minimum(lam, theta).sum())
    active = lam > theta
    srate = float(np.log(lam[active] / theta).sum()) if active.any() else 0.0
    return smin, srate, int(active.sum())


def tilted_fluctuation(z):
    """Row sums of 0.5*(z**2 - 1) for a (samples, modes) normal array."""
    z = np.asarray(z, dtype=np.float64)
    return 0.5 * (z * z - 1.0).sum(axis=1)


def ball_hits(y_act, base, budget, repro_sd, z):
    """Count reproduction draws landing inside the distortion ball.

    y_act : decorrelated source coordinates on modes with positive
        reproduction variance.
    base : distortion contribution of the remaining modes.
    budget : n_r * D_r.
    repro_sd : per-mode reproduction standard deviations.
    z : (samples, modes) standard normals.
    """
    if y_act.size == 0:
        return int(z.shape[0]) if base <= budget else 0
    yhat = z * repro_sd[None, :]
    dist = ((y_act[None, :] - yhat) ** 2).sum(axis=1) + base
    return int((dist <= budget).sum())


def codebook_failures(y_act, base, budget, repro_sd, n_codewords, seed):
    """Simulate the regionwise random-coding experiment.

    For each outer draw i, draws up to ``n_codewords`` codewords from the
    reproduction marginal and records a failure when none lands in the
    distortion ball around row i.  Early exit on first hit.

    Returns the failure count over the outer draws.
    """
    rng = np.random.RandomState(seed)
    n_outer, n_modes = y_act.shape
    failures = 0
    chunk = 2048
    for i in range(n_outer):
        t = budget - base[i]
        if t < 0.0:
            failures += 1
            continue
        if n_modes == 0:
            continue  # t >= 0 means the deterministic codeword hits
        remaining = n_codewords
        hit = False
        yi = y_act[i]
        while remaining > 0 and not hit:
            m = min(chunk, remaining)
            zc = rng.standard_normal((m, n_modes)) * repro_sd[None, :]
            dist = ((yi[None, :] - zc) ** 2).sum(axis=1)
            if (dist <= t).any():
                hit = True
            remaining -= m
        if not hit:
            failures += 1
    return failures
