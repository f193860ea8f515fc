"""Numba-compiled twins of the hot kernels in :mod:`_kernels_numpy`.

Compiled lazily on first call; ``cache=True`` persists compilation across
processes.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def sse_total(a, b):
    # Kahan-compensated accumulation of (a-b)^2
    s = 0.0
    c = 0.0
    for i in range(a.shape[0]):
        d = a[i] - b[i]
        y = d * d - c
        t = s + y
        c = (t - s) - y
        s = t
    return s


@njit(cache=True)
def sse_by_region(a, b, labels, n_regions):
    s = np.zeros(n_regions, dtype=np.float64)
    c = np.zeros(n_regions, dtype=np.float64)
    for i in range(a.shape[0]):
        r = labels[i]
        d = a[i] - b[i]
        y = d * d - c[r]
        t = s[r] + y
        c[r] = (t - s[r]) - y
        s[r] = t
    return s


@njit(cache=True)
def waterfill_sums(spectrum, theta):
    smin = 0.0
    srate = 0.0
    active = 0
    for i in range(spectrum.shape[0]):
        lam = spectrum[i]
        if lam > theta:
            smin += theta
            srate += np.log(lam / theta)
            active += 1
        else:
            smin += lam
    return smin, srate, active


@njit(cache=True)
def tilted_fluctuation(z):
    n, m = z.shape
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        s = 0.0
        for j in range(m):
            s += z[i, j] * z[i, j] - 1.0
        out[i] = 0.5 * s
    return out


@njit(cache=True)
def ball_hits(y_act, base, budget, repro_sd, z):
    n, m = z.shape
    if m == 0:
        return n if base <= budget else 0
    t = budget - base
    if t < 0.0:
        return 0
    hits = 0
    for i in range(n):
        s = 0.0
        for j in range(m):
            d = y_act[j] - repro_sd[j] * z[i, j]
            s += d * d
            if s > t:
                break
        if s <= t:
            hits += 1
    return hits


@njit(cache=True)
def codebook_failures(y_act, base, budget, repro_sd, n_codewords, seed):
    np.random.seed(seed)
    n_outer, n_modes = y_act.shape
    failures = 0
    for i in range(n_outer):
        t = budget - base[i]
        if t < 0.0:
            failures += 1
            continue
        if n_modes == 0:
            continue
        hit = False
        for _ in range(n_codewords):
            s = 0.0
            for j in range(n_modes):
                d = y_act[i, j] - repro_sd[j] * np.random.standard_normal()
                s += d * d
                if s > t:
                    break
            if s <= t:
                hit = True
                break
        if not hit:
            failures += 1
    return failures
