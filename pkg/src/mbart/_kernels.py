"""Numba-compiled inner loops for the grid marginals, with numpy fallbacks.

The sampler calls these thousands of times per iteration; everything here
is pure array math so the compiled and fallback paths agree to float
precision.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True, fastmath=False)
def grid_log_weights(
    lo: float,
    delta: float,
    n_points: int,
    qa: float,
    qb: float,
    qc: float,
) -> np.ndarray:
    """log integrand exp(-(qa*mu + qb)*mu - qc) at the midpoint grid."""
    out = np.empty(n_points)
    for i in range(n_points):
        mu = lo + (i + 0.5) * delta
        out[i] = -((qa * mu + qb) * mu) - qc
    return out


@njit(cache=True, fastmath=False)
def ordered_pair_logsum(
    mus_l: np.ndarray,
    log_wl: np.ndarray,
    delta_l: float,
    mus_r: np.ndarray,
    log_wr: np.ndarray,
) -> float:
    """log of sum_j w_r[j] * C_l(mu_r[j]) where C_l is the piecewise-constant
    cumulative of the left grid (cells straddling the bound count
    fractionally), i.e. the order-constrained double sum."""
    a = log_wl[0]
    for v in log_wl:
        if v > a:
            a = v
    b = log_wr[0]
    for v in log_wr:
        if v > b:
            b = v
    half = 0.5 * delta_l
    total = 0.0
    cum = 0.0
    i = 0
    nl = mus_l.size
    for j in range(mus_r.size):
        bound = mus_r[j]
        while i < nl and mus_l[i] + half <= bound:
            cum += math.exp(log_wl[i] - a)
            i += 1
        part = 0.0
        if i < nl:
            frac = (bound - (mus_l[i] - half)) / delta_l
            if frac > 0.0:
                if frac > 1.0:
                    frac = 1.0
                part = math.exp(log_wl[i] - a) * frac
        total += math.exp(log_wr[j] - b) * (cum + part)
    if total <= 0.0:
        return -math.inf
    return a + b + math.log(total)
