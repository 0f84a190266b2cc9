import math

import numpy as np
import pytest
from scipy import integrate, stats

from mbart.constraints import Interval
from mbart.errors import InvariantError
from mbart.marginals import (
    LeafStats,
    conjugate_posterior,
    draw_mu_pair,
    draw_truncated_normal,
    leaf_log_marginal_constrained,
    leaf_log_marginal_grid,
    pair_log_marginal_grid,
)


def random_stats(rng, max_n=40, spread=0.3):
    n = int(rng.integers(1, max_n))
    r = rng.normal(rng.normal(0.0, spread), rng.uniform(0.05, 1.0), n)
    return LeafStats.of(r)


def random_instance(rng, kind):
    """(stats, interval, prior_mean, prior_var, sigma) with a natural interval."""
    stats = random_stats(rng)
    pm = float(rng.normal(0.0, 0.2))
    pv = float(rng.uniform(0.001, 0.5))
    sigma = float(rng.uniform(0.05, 1.5))
    mean, var = conjugate_posterior(stats, pm, pv, sigma)
    sd = math.sqrt(var)
    if kind == 0:
        iv = Interval()
    elif kind == 1:
        iv = Interval(mean + float(rng.normal(0.0, 2.0 * sd)), math.inf)
    elif kind == 2:
        iv = Interval(-math.inf, mean + float(rng.normal(0.0, 2.0 * sd)))
    else:
        a = mean + float(rng.normal(0.0, 2.0 * sd))
        b = a + abs(float(rng.normal(0.0, 3.0 * sd))) + 0.2 * sd
        iv = Interval(a, b)
    return stats, iv, pm, pv, sigma


def quad_log_marginal(stats, interval, pm, pv, sigma):
    """Independent quadrature evaluation of the truncated leaf marginal."""
    mean, var = conjugate_posterior(stats, pm, pv, sigma)
    sd = math.sqrt(var)
    lo = max(interval.a, mean - 10 * sd)
    hi = min(interval.b, mean + 10 * sd)
    if lo >= hi:
        lo, hi = (interval.a, min(interval.b, interval.a + 20 * sd)) if interval.a > mean else (
            max(interval.a, interval.b - 20 * sd),
            interval.b,
        )

    def f(mu):
        return math.exp(
            -0.5 * stats.count * math.log(2 * math.pi * sigma**2)
            - (stats.total_sq - 2 * mu * stats.total + stats.count * mu**2) / (2 * sigma**2)
            - 0.5 * math.log(2 * math.pi * pv)
            - (mu - pm) ** 2 / (2 * pv)
        )

    val, _ = integrate.quad(f, lo, hi, epsabs=0, epsrel=1e-11, limit=200)
    return math.log(val)


class TestUnivariateMarginal:
    def test_unbounded_equals_conjugate_marginal(self, rng):
        # truncation factor is one; cross-check against direct quadrature
        for _ in range(10):
            stats, _, pm, pv, sigma = random_instance(rng, 0)
            got = leaf_log_marginal_constrained(stats, Interval(), pm, pv, sigma)
            assert got == pytest.approx(quad_log_marginal(stats, Interval(), pm, pv, sigma), abs=1e-8)

    def test_half_line_at_posterior_mean_is_half(self, rng):
        for _ in range(10):
            stats, _, pm, pv, sigma = random_instance(rng, 0)
            mean, _ = conjugate_posterior(stats, pm, pv, sigma)
            free = leaf_log_marginal_constrained(stats, Interval(), pm, pv, sigma)
            half = leaf_log_marginal_constrained(stats, Interval(mean, math.inf), pm, pv, sigma)
            assert half == pytest.approx(free + math.log(0.5), abs=1e-12)

    def test_infeasible_interval_is_minus_inf(self, rng):
        stats, _, pm, pv, sigma = random_instance(rng, 0)
        assert leaf_log_marginal_constrained(stats, Interval(1.0, 0.0), pm, pv, sigma) == -math.inf
        assert leaf_log_marginal_grid(stats, Interval(1.0, 0.0), pm, pv, sigma) == -math.inf

    def test_grid_matches_closed_form(self, rng):
        # acceptance criterion scale: 200 instances at 1e-6 relative
        for trial in range(200):
            stats, iv, pm, pv, sigma = random_instance(rng, trial % 4)
            closed = leaf_log_marginal_constrained(stats, iv, pm, pv, sigma)
            grid = leaf_log_marginal_grid(stats, iv, pm, pv, sigma, n_points=1024)
            assert abs(math.expm1(grid - closed)) < 1e-6

    def test_deep_tail_interval_stable(self):
        stats = LeafStats(10, 2.0, 1.5)
        val = leaf_log_marginal_constrained(stats, Interval(50.0, math.inf), 0.0, 0.01, 0.3)
        assert math.isfinite(val)
        val2 = leaf_log_marginal_constrained(stats, Interval(50.0, 51.0), 0.0, 0.01, 0.3)
        assert math.isfinite(val2) and val2 <= val
        # a nearer tail interval carries visibly more mass
        val3 = leaf_log_marginal_constrained(stats, Interval(5.0, math.inf), 0.0, 0.01, 0.3)
        assert val3 > val


def bivariate_quad(stats_l, stats_r, int_l, int_r, pm, pv, sigma):
    ml, vl = conjugate_posterior(stats_l, pm, pv, sigma)
    mr, vr = conjugate_posterior(stats_r, pm, pv, sigma)
    sdl, sdr = math.sqrt(vl), math.sqrt(vr)
    wide = 12.0 * max(sdl, sdr)

    def fl(mu):
        return math.exp(
            -0.5 * stats_l.count * math.log(2 * math.pi * sigma**2)
            - (stats_l.total_sq - 2 * mu * stats_l.total + stats_l.count * mu**2) / (2 * sigma**2)
            - 0.5 * math.log(2 * math.pi * pv)
            - (mu - pm) ** 2 / (2 * pv)
        )

    def fr(mu):
        return math.exp(
            -0.5 * stats_r.count * math.log(2 * math.pi * sigma**2)
            - (stats_r.total_sq - 2 * mu * stats_r.total + stats_r.count * mu**2) / (2 * sigma**2)
            - 0.5 * math.log(2 * math.pi * pv)
            - (mu - pm) ** 2 / (2 * pv)
        )

    lo_r = max(int_r.a, min(ml, mr) - wide)
    hi_r = min(int_r.b, max(ml, mr) + wide)
    lo_l = max(int_l.a, min(ml, mr) - wide)
    hi_l_cap = min(int_l.b, max(ml, mr) + wide)
    val, _ = integrate.dblquad(
        lambda mu_l, mu_r: fl(mu_l) * fr(mu_r),
        lo_r,
        hi_r,
        lambda mu_r: lo_l,
        lambda mu_r: max(lo_l, min(mu_r, hi_l_cap)),
        epsabs=1e-320,
        epsrel=1e-11,
    )
    return math.log(val) if val > 0 else -math.inf


class TestPairMarginal:
    def test_unordered_factorizes(self, rng):
        for _ in range(10):
            stats_l, stats_r = random_stats(rng), random_stats(rng)
            pm, pv, sigma = 0.0, float(rng.uniform(0.01, 0.3)), float(rng.uniform(0.1, 1.0))
            con = (Interval(), Interval(), False)
            pair = pair_log_marginal_grid(stats_l, stats_r, con, (pm, pv), (pm, pv), sigma, 256)
            left = leaf_log_marginal_grid(stats_l, Interval(), pm, pv, sigma, 256)
            right = leaf_log_marginal_grid(stats_r, Interval(), pm, pv, sigma, 256)
            assert pair == pytest.approx(left + right, abs=1e-12)

    def test_symmetric_ordering_halves(self, rng):
        for _ in range(5):
            stats = random_stats(rng)
            pm, pv, sigma = 0.0, 0.05, 0.4
            con = (Interval(), Interval(), True)
            pair = pair_log_marginal_grid(stats, stats, con, (pm, pv), (pm, pv), sigma, 1024)
            single = leaf_log_marginal_constrained(stats, Interval(), pm, pv, sigma)
            assert pair == pytest.approx(2.0 * single - math.log(2.0), abs=1e-6)

    def test_matches_2d_quadrature(self, rng):
        # acceptance criterion scale: 50 instances at 1e-4 relative
        for _ in range(50):
            stats_l, stats_r = random_stats(rng, spread=0.3), random_stats(rng, spread=0.3)
            pm, pv, sigma = 0.0, float(rng.uniform(0.01, 0.3)), float(rng.uniform(0.1, 1.0))
            ml, vl = conjugate_posterior(stats_l, pm, pv, sigma)
            mr, vr = conjugate_posterior(stats_r, pm, pv, sigma)
            int_l = Interval(ml - abs(float(rng.normal(0, 2 * math.sqrt(vl)))), math.inf)
            int_r = Interval(-math.inf, mr + abs(float(rng.normal(0, 2 * math.sqrt(vr)))))
            con = (int_l, int_r, True)
            got = pair_log_marginal_grid(stats_l, stats_r, con, (pm, pv), (pm, pv), sigma, 1024)
            expected = bivariate_quad(stats_l, stats_r, int_l, int_r, pm, pv, sigma)
            if expected == -math.inf:
                assert got == -math.inf
            else:
                assert abs(math.expm1(got - expected)) < 1e-4

    def test_empty_feasible_set_rejects(self):
        stats = LeafStats(5, 1.0, 0.5)
        con = (Interval(2.0, 3.0), Interval(-3.0, -2.0), True)  # order impossible
        assert pair_log_marginal_grid(stats, stats, con, (0, 0.1), (0, 0.1), 0.5, 64) == -math.inf


class TestPairDraw:
    def test_flat_likelihood_matches_discretized_prior(self, rng):
        # zero observations: the grid draw must reproduce the prior cell masses
        stats = LeafStats(0, 0.0, 0.0)
        con = (Interval(), Interval(), False)
        pm, pv = 0.0, 0.09
        n_points = 16
        draws = np.array(
            [
                draw_mu_pair(stats, stats, con, (pm, pv), (pm, pv), 0.5, n_points, rng)[0]
                for _ in range(20000)
            ]
        )
        # with no data the grid spans pm +- 6 sd; rebuild its cell centers
        sd = math.sqrt(pv)
        lo, hi = pm - 6 * sd, pm + 6 * sd
        delta = (hi - lo) / n_points
        centers = lo + (np.arange(n_points) + 0.5) * delta
        counts = np.zeros(n_points)
        idx = np.clip(np.round((draws - lo) / delta - 0.5).astype(int), 0, n_points - 1)
        np.add.at(counts, idx, 1)
        assert np.allclose(np.sort(np.unique(draws)), np.unique(centers[idx]))
        weights = np.exp(-((centers - pm) ** 2) / (2 * pv))
        expected = weights / weights.sum() * draws.size
        mask = expected > 8
        chi2_stat = float(np.sum((counts[mask] - expected[mask]) ** 2 / expected[mask]))
        dof = int(mask.sum() - 1)
        assert chi2_stat < stats_chi2_ppf(0.99, dof)

    def test_order_support(self, rng):
        for _ in range(200):
            stats_l, stats_r = random_stats(rng), random_stats(rng)
            con = (Interval(), Interval(), True)
            mu_l, mu_r = draw_mu_pair(stats_l, stats_r, con, (0, 0.04), (0, 0.04), 0.5, 64, rng)
            assert mu_l <= mu_r

    def test_separated_data_concentrates_at_conjugate_means(self, rng):
        sigma = 0.01
        stats_l = LeafStats.of(np.full(30, -0.5))
        stats_r = LeafStats.of(np.full(30, 0.5))
        pm, pv = 0.0, 10.0
        ml, vl = conjugate_posterior(stats_l, pm, pv, sigma)
        mr, vr = conjugate_posterior(stats_r, pm, pv, sigma)
        con = (Interval(), Interval(), True)
        for _ in range(100):
            mu_l, mu_r = draw_mu_pair(stats_l, stats_r, con, (pm, pv), (pm, pv), sigma, 128, rng)
            assert abs(mu_l - ml) < 3.5 * math.sqrt(vl) + 1e-6
            assert abs(mu_r - mr) < 3.5 * math.sqrt(vr) + 1e-6

    def test_infeasible_raises(self, rng):
        stats = LeafStats(5, 1.0, 0.5)
        con = (Interval(1.0, -1.0), Interval(), True)
        with pytest.raises(InvariantError):
            draw_mu_pair(stats, stats, con, (0, 0.1), (0, 0.1), 0.5, 64, rng)


def stats_chi2_ppf(q, dof):
    return float(stats.chi2.ppf(q, dof))


class TestTruncatedNormal:
    @pytest.mark.parametrize(
        "a,b",
        [
            (-math.inf, math.inf),
            (0.3, math.inf),
            (-math.inf, -0.2),
            (-0.5, 0.75),
            (2.0, 2.5),
            (7.0, math.inf),  # far tail: rejection branch
            (-math.inf, -7.0),
        ],
    )
    def test_distribution(self, rng, a, b):
        mean, sd = 0.1, 0.8
        draws = np.array([draw_truncated_normal(rng, mean, sd, a, b) for _ in range(4000)])
        assert np.all(draws >= a) and np.all(draws <= b)
        lo = (a - mean) / sd if a > -math.inf else -math.inf
        hi = (b - mean) / sd if b < math.inf else math.inf
        ref = stats.truncnorm(lo if lo > -math.inf else -40, hi if hi < math.inf else 40,
                              loc=mean, scale=sd)
        _, pval = stats.kstest(draws, ref.cdf)
        assert pval > 0.001

    def test_empty_interval_raises(self, rng):
        with pytest.raises(InvariantError):
            draw_truncated_normal(rng, 0.0, 1.0, 2.0, 1.0)


class TestConjugatePosterior:
    def test_no_data_returns_prior(self):
        mean, var = conjugate_posterior(LeafStats(0, 0.0, 0.0), 0.3, 0.25, 1.0)
        assert mean == pytest.approx(0.3)
        assert var == pytest.approx(0.25)

    def test_precision_weighting(self):
        stats = LeafStats.of(np.array([1.0, 1.0, 1.0, 1.0]))
        mean, var = conjugate_posterior(stats, 0.0, 1.0, 1.0)
        assert var == pytest.approx(1.0 / 5.0)
        assert mean == pytest.approx(4.0 / 5.0)
