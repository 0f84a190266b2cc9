"""Leaf-mean marginal likelihoods and constrained draws.

The tree moves integrate one or two leaf means out of the product
normal-likelihood x normal-prior, restricted to the interval or order
constraints the surrounding leaves impose.  The univariate integral has a
closed form (conjugate marginal times a normal-CDF difference); the ordered
bivariate integral is evaluated on an equally spaced grid spanning the
conjugate posterior mass of both children, clipped to the feasibility
intervals and restricted to ordered pairs.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import log_ndtr, ndtri

from ._kernels import grid_log_weights as _kernel_grid_log_weights
from ._kernels import ordered_pair_logsum as _kernel_ordered_logsum
from .constraints import Interval
from .errors import InvariantError

_LOG_2PI = math.log(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)


class LeafStats(NamedTuple):
    """Sufficient statistics of the residuals assigned to one leaf."""

    count: int
    total: float
    total_sq: float

    @classmethod
    def of(cls, values: np.ndarray) -> "LeafStats":
        v = np.asarray(values, dtype=float)
        return cls(v.size, float(v.sum()), float(v @ v))


def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def log_norm_cdf(x: float) -> float:
    return float(log_ndtr(x))


def conjugate_posterior(
    stats: LeafStats, prior_mean: float, prior_var: float, sigma: float
) -> tuple[float, float]:
    """(mean, variance) of mu given the leaf's residuals under a normal prior."""
    prec = stats.count / sigma**2 + 1.0 / prior_var
    var = 1.0 / prec
    mean = var * (stats.total / sigma**2 + prior_mean / prior_var)
    return mean, var


def _log_trunc_mass(lo: float, hi: float) -> float:
    """log(Phi(hi) - Phi(lo)) for standardized bounds, stable in both tails."""
    if lo == -math.inf and hi == math.inf:
        return 0.0
    if hi <= lo:
        return -math.inf
    if lo >= 0.0:
        # both in the upper tail: work with complements
        la = log_norm_cdf(-lo)
        lb = log_norm_cdf(-hi) if hi < math.inf else -math.inf
        return la + math.log1p(-math.exp(lb - la)) if lb > -math.inf else la
    if hi <= 0.0:
        la = log_norm_cdf(hi)
        lb = log_norm_cdf(lo) if lo > -math.inf else -math.inf
        return la + math.log1p(-math.exp(lb - la)) if lb > -math.inf else la
    mass = norm_cdf(hi) - norm_cdf(lo)
    return math.log(mass) if mass > 0.0 else -math.inf


def _log_marginal_unbounded(
    stats: LeafStats, prior_mean: float, prior_var: float, sigma: float
) -> float:
    """Exact log of the unconstrained conjugate marginal of the leaf residuals."""
    post_mean, post_var = conjugate_posterior(stats, prior_mean, prior_var, sigma)
    return (
        -0.5 * stats.count * (_LOG_2PI + 2.0 * math.log(sigma))
        + 0.5 * math.log(post_var / prior_var)
        - stats.total_sq / (2.0 * sigma**2)
        - prior_mean**2 / (2.0 * prior_var)
        + post_mean**2 / (2.0 * post_var)
    )


def leaf_log_marginal_constrained(
    stats: LeafStats,
    interval: Interval,
    prior_mean: float,
    prior_var: float,
    sigma: float,
) -> float:
    """log of the leaf marginal restricted to [a, b]: conjugate closed form
    times the posterior mass of the interval.  Infeasible intervals give -inf
    so the enclosing proposal auto-rejects."""
    if interval.infeasible:
        return -math.inf
    post_mean, post_var = conjugate_posterior(stats, prior_mean, prior_var, sigma)
    sd = math.sqrt(post_var)
    lo = (interval.a - post_mean) / sd if interval.a > -math.inf else -math.inf
    hi = (interval.b - post_mean) / sd if interval.b < math.inf else math.inf
    return _log_marginal_unbounded(stats, prior_mean, prior_var, sigma) + _log_trunc_mass(lo, hi)


def _grid_span(
    stats: LeafStats,
    interval: Interval,
    prior_mean: float,
    prior_var: float,
    sigma: float,
    window: Optional[tuple[float, float]] = None,
) -> tuple[float, float]:
    """Real interval the integration grid covers.

    The +-6 sd window around the conjugate posterior mean (or the supplied
    override window), clipped to [a, b]; whenever a constraint cuts one
    side, the window is re-extended on the other side (up to its full
    width) so the surviving tail mass is covered.
    """
    if window is None:
        post_mean, post_var = conjugate_posterior(stats, prior_mean, prior_var, sigma)
        half = 6.0 * math.sqrt(post_var)
        w_lo, w_hi = post_mean - half, post_mean + half
    else:
        w_lo, w_hi = window
    width = w_hi - w_lo
    lo = max(interval.a, w_lo)
    hi = min(interval.b, w_hi)
    if lo > hi:  # window misses [a, b] entirely; hug the near endpoint
        if w_lo > interval.b:
            return max(interval.a, interval.b - width), interval.b
        return interval.a, min(interval.b, interval.a + width)
    hi = min(interval.b, max(hi, lo + width))
    lo = max(interval.a, min(lo, hi - width))
    return lo, hi


_MIDPOINTS: dict[int, np.ndarray] = {}


def _midpoints(n: int) -> np.ndarray:
    grid = _MIDPOINTS.get(n)
    if grid is None:
        grid = _MIDPOINTS[n] = np.arange(n) + 0.5
    return grid


def _quad_coefs(
    stats: LeafStats, prior_mean: float, prior_var: float, sigma: float
) -> tuple[float, float, float]:
    """The integrand is exp(-(a*mu + b)*mu - c); returns (a, b, c)."""
    sig2 = sigma * sigma
    a = stats.count / (2.0 * sig2) + 0.5 / prior_var
    b = -(stats.total / sig2 + prior_mean / prior_var)
    c = (
        0.5 * stats.count * (_LOG_2PI + 2.0 * math.log(sigma))
        + stats.total_sq / (2.0 * sig2)
        + 0.5 * (_LOG_2PI + math.log(prior_var))
        + prior_mean * prior_mean / (2.0 * prior_var)
    )
    return a, b, c


def _grid_log_weights(
    stats: LeafStats,
    interval: Interval,
    prior_mean: float,
    prior_var: float,
    sigma: float,
    n_points: int,
    window: Optional[tuple[float, float]] = None,
) -> tuple[np.ndarray, np.ndarray, float, tuple[float, float, float]]:
    """(grid values, log integrand at them, cell width, quadratic coefs)."""
    lo, hi = _grid_span(stats, interval, prior_mean, prior_var, sigma, window)
    delta = (hi - lo) / n_points
    mus = lo + _midpoints(n_points) * delta
    coefs = _quad_coefs(stats, prior_mean, prior_var, sigma)
    log_w = _kernel_grid_log_weights(lo, delta, n_points, *coefs)
    return mus, log_w, delta, coefs


def _pair_window(
    stats_l: LeafStats,
    stats_r: LeafStats,
    prior_l: tuple[float, float],
    prior_r: tuple[float, float],
    sigma: float,
) -> tuple[float, float]:
    """Shared window covering both children's posterior mass, so the
    order-constrained overlap is on the grid even when the unconstrained
    windows are disjoint."""
    m_l, v_l = conjugate_posterior(stats_l, *prior_l, sigma)
    m_r, v_r = conjugate_posterior(stats_r, *prior_r, sigma)
    s_l, s_r = math.sqrt(v_l), math.sqrt(v_r)
    return min(m_l - 6.0 * s_l, m_r - 6.0 * s_r), max(m_l + 6.0 * s_l, m_r + 6.0 * s_r)


def leaf_log_marginal_grid(
    stats: LeafStats,
    interval: Interval,
    prior_mean: float,
    prior_var: float,
    sigma: float,
    n_points: int = 64,
) -> float:
    """Grid evaluation of the constrained leaf marginal.

    Midpoint rule over the span, plus the Euler-Maclaurin endpoint slope
    correction so the value is interchangeable with the closed form.
    """
    if interval.infeasible:
        return -math.inf
    mus, log_w, delta, (qa, qb, qc) = _grid_log_weights(
        stats, interval, prior_mean, prior_var, sigma, n_points
    )
    shift = float(log_w.max())
    total = float(np.exp(log_w - shift).sum())
    # endpoint correction: integral = delta * (sum + delta/24 * (f'(hi) - f'(lo)))
    # with f(x) = exp(-(qa*x + qb)*x - qc) so f'(x) = -(2*qa*x + qb) * f(x)
    lo_edge = mus[0] - 0.5 * delta
    hi_edge = mus[-1] + 0.5 * delta
    f_lo = math.exp(-((qa * lo_edge + qb) * lo_edge) - qc - shift)
    f_hi = math.exp(-((qa * hi_edge + qb) * hi_edge) - qc - shift)
    correction = (delta / 24.0) * (
        -(2.0 * qa * hi_edge + qb) * f_hi + (2.0 * qa * lo_edge + qb) * f_lo
    )
    if total + correction > 0.0:
        total += correction
    return shift + math.log(total) + math.log(delta)


PairConstraint = tuple[Interval, Interval, bool]


def _ordered_log_sum(
    mus_l: np.ndarray, log_wl: np.ndarray, delta_l: float, mus_r: np.ndarray, log_wr: np.ndarray
) -> float:
    """log of sum over pairs with mu_l <= mu_r of exp(log_wl_i + log_wr_j);
    left cells straddling the order bound contribute fractionally."""
    return float(_kernel_ordered_logsum(mus_l, log_wl, delta_l, mus_r, log_wr))


def pair_log_marginal_grid(
    stats_l: LeafStats,
    stats_r: LeafStats,
    constraint: PairConstraint,
    prior_l: tuple[float, float],
    prior_r: tuple[float, float],
    sigma: float,
    n_points: int = 64,
) -> float:
    """log of the joint marginal of two leaves under interval and order constraints.

    prior_l / prior_r are (mean, variance) pairs.  Without the order
    constraint the sum factorizes into two univariate grid marginals; with
    it, pairs are restricted to mu_left <= mu_right using the real grid
    values.  An empty feasible set gives -inf (proposal auto-rejects).
    """
    int_l, int_r, ordered = constraint
    if int_l.infeasible or int_r.infeasible:
        return -math.inf
    if not ordered:
        left = leaf_log_marginal_grid(stats_l, int_l, *prior_l, sigma, n_points)
        right = leaf_log_marginal_grid(stats_r, int_r, *prior_r, sigma, n_points)
        return left + right
    int_l, int_r = _tighten_ordered(int_l, int_r)
    if int_l.infeasible or int_r.infeasible:
        return -math.inf
    if _order_inactive(stats_l, stats_r, prior_l, prior_r, sigma):
        # the mass windows are already fully ordered: the sum factorizes and
        # per-child grids keep full resolution
        left = leaf_log_marginal_grid(stats_l, int_l, *prior_l, sigma, n_points)
        right = leaf_log_marginal_grid(stats_r, int_r, *prior_r, sigma, n_points)
        return left + right
    window = _pair_window(stats_l, stats_r, prior_l, prior_r, sigma)
    mus_l, log_wl, d_l, _ = _grid_log_weights(stats_l, int_l, *prior_l, sigma, n_points, window)
    mus_r, log_wr, d_r, _ = _grid_log_weights(stats_r, int_r, *prior_r, sigma, n_points, window)
    if mus_l[0] - 0.5 * d_l >= mus_r[-1]:
        return -math.inf
    log_sum = _ordered_log_sum(mus_l, log_wl, d_l, mus_r, log_wr)
    return log_sum + math.log(d_l) + math.log(d_r)


def _order_inactive(
    stats_l: LeafStats,
    stats_r: LeafStats,
    prior_l: tuple[float, float],
    prior_r: tuple[float, float],
    sigma: float,
) -> bool:
    """True when the left +-6 sd window sits entirely below the right one."""
    m_l, v_l = conjugate_posterior(stats_l, *prior_l, sigma)
    m_r, v_r = conjugate_posterior(stats_r, *prior_r, sigma)
    return m_l + 6.0 * math.sqrt(v_l) <= m_r - 6.0 * math.sqrt(v_r)


def _tighten_ordered(int_l: Interval, int_r: Interval) -> tuple[Interval, Interval]:
    """Under mu_l <= mu_r, each child's interval shrinks by the other's bound."""
    return (
        Interval(int_l.a, min(int_l.b, int_r.b)),
        Interval(max(int_r.a, int_l.a), int_r.b),
    )


def draw_mu_pair(
    stats_l: LeafStats,
    stats_r: LeafStats,
    constraint: PairConstraint,
    prior_l: tuple[float, float],
    prior_r: tuple[float, float],
    sigma: float,
    n_points: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Sample (mu_left, mu_right) from the grid distribution proportional to
    likelihood x prior, renormalized over the feasible grid pairs."""
    int_l, int_r, ordered = constraint
    if int_l.infeasible or int_r.infeasible:
        raise InvariantError("mu pair draw on an infeasible constraint")
    if not ordered:
        mus_l, log_wl, _, _ = _grid_log_weights(stats_l, int_l, *prior_l, sigma, n_points)
        mus_r, log_wr, _, _ = _grid_log_weights(stats_r, int_r, *prior_r, sigma, n_points)
        return (
            _categorical(mus_l, log_wl, rng),
            _categorical(mus_r, log_wr, rng),
        )
    int_l, int_r = _tighten_ordered(int_l, int_r)
    if int_l.infeasible or int_r.infeasible:
        raise InvariantError("mu pair draw on an infeasible constraint")
    if _order_inactive(stats_l, stats_r, prior_l, prior_r, sigma):
        mus_l, log_wl, _, _ = _grid_log_weights(stats_l, int_l, *prior_l, sigma, n_points)
        mus_r, log_wr, _, _ = _grid_log_weights(stats_r, int_r, *prior_r, sigma, n_points)
        return (
            _categorical(mus_l, log_wl, rng),
            _categorical(mus_r, log_wr, rng),
        )
    window = _pair_window(stats_l, stats_r, prior_l, prior_r, sigma)
    mus_l, log_wl, _, _ = _grid_log_weights(stats_l, int_l, *prior_l, sigma, n_points, window)
    mus_r, log_wr, _, _ = _grid_log_weights(stats_r, int_r, *prior_r, sigma, n_points, window)
    # marginal over mu_r weighted by the feasible mass of mu_l below it
    a = float(log_wl.max())
    w_l = np.exp(log_wl - a)
    cum_l = np.concatenate(([0.0], np.cumsum(w_l)))
    counts = np.searchsorted(mus_l, mus_r, side="right")
    b = float(log_wr.max())
    w_r = np.exp(log_wr - b) * cum_l[counts]
    total = float(w_r.sum())
    if total <= 0.0:
        raise InvariantError("mu pair draw on an empty feasible grid")
    j = int(np.searchsorted(np.cumsum(w_r), rng.random() * total, side="left"))
    j = min(j, w_r.size - 1)
    while w_r[j] == 0.0:  # zero-mass cell reachable only through float ties
        j += 1
    k = counts[j]
    i = int(np.searchsorted(cum_l[1 : k + 1], rng.random() * cum_l[k], side="left"))
    i = min(i, k - 1)
    return float(mus_l[i]), float(mus_r[j])


def _categorical(values: np.ndarray, log_w: np.ndarray, rng: np.random.Generator) -> float:
    shift = float(log_w.max())
    w = np.exp(log_w - shift)
    cum = np.cumsum(w)
    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="left"))
    return float(values[min(idx, values.size - 1)])


def draw_truncated_normal(
    rng: np.random.Generator, mean: float, sd: float, a: float, b: float
) -> float:
    """One draw of N(mean, sd^2) conditioned on [a, b], stable in far tails.

    Inverse-CDF in the central regime; exponential-proposal rejection when
    both bounds sit deep in one tail.
    """
    lo = (a - mean) / sd if a > -math.inf else -math.inf
    hi = (b - mean) / sd if b < math.inf else math.inf
    if hi < lo:
        raise InvariantError(f"empty truncation interval [{a}, {b}]")
    if hi <= 0.0:  # region in the lower half: mirror into the upper half
        z = -_std_trunc(rng, -hi, -lo)
    else:
        z = _std_trunc(rng, lo, hi)
    return mean + sd * z


def _std_trunc(rng: np.random.Generator, lo: float, hi: float) -> float:
    """Standard-normal draw on [lo, hi]; callers arrange hi > 0 or lo >= 0."""
    if lo > 5.0:
        # both bounds far right: shifted-exponential rejection
        while True:
            e = rng.exponential(1.0 / lo)
            z = lo + e
            if z <= hi and math.log(rng.random()) <= -0.5 * e * e:
                return z
    p_lo = norm_cdf(lo) if lo > -math.inf else 0.0
    p_hi = norm_cdf(hi) if hi < math.inf else 1.0
    if p_hi <= p_lo:
        return min(max(lo, 0.0), hi)
    u = p_lo + rng.random() * (p_hi - p_lo)
    u = min(max(u, 5e-324), 1.0 - 1e-16)
    z = float(ndtri(u))
    return min(max(z, lo), hi)
