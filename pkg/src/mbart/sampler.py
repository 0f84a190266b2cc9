"""Backfitting MCMC over the tree ensemble.

Each iteration sweeps the trees: a birth/death Metropolis-Hastings step on
the tree structure (with the affected leaf means integrated out, conditional
on the remaining means), followed by an exact full-conditional refresh of
every leaf mean, then a conjugate draw of sigma.  In constrained mode the
integrals run over the feasibility intervals the other leaves impose, the
marginal of an ordered child pair is evaluated on a grid, and every mean is
drawn from a truncated normal, so each stored draw is monotone by
construction.

The constraint-prior normalizers are deliberately omitted (set to one); the
compensating tree-prior defaults (alpha, beta) = (.25, .8) for constrained
fits live in :mod:`mbart.priors`.
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Optional, Union

import numpy as np

from .constraints import (
    Interval,
    check_tree_monotone,
    interval_from_neighbors,
    is_above_neighbor,
    leaf_neighbors,
    split_region,
)
from .data_io import Dataset, build_cutpoints
from .errors import InvariantError
from .inference import DrawSet
from .marginals import (
    LeafStats,
    conjugate_posterior,
    draw_mu_pair,
    draw_truncated_normal,
    leaf_log_marginal_constrained,
    pair_log_marginal_grid,
)
from .priors import (
    HyperParams,
    calibrate_mu_prior,
    calibrate_sigma_prior,
    mu_prior,
    split_prob,
)
from .tree import (
    Forest,
    SplitRule,
    Tree,
    admissible_index_range,
    admissible_split_ranges,
    assign_rows,
    death_eligible_nodes,
    depth_of,
    evaluate_tree_rows,
    leaf_regions,
    region_has_split,
    split_ranges_for_region,
)

RngLike = Union[int, np.random.Generator, np.random.SeedSequence]

_FREE = Interval()
_FREE_PAIR = (_FREE, _FREE, False)


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sigma_hat(dataset: Dataset, kind: str = "linear") -> float:
    """Rough overestimate of the noise sd on the internal y scale.

    "linear": residual sd of least squares of y on X (with intercept);
    "naive": sample sd of y.  Falls back to naive when the regression is
    underdetermined.
    """
    y = dataset.y
    naive = float(np.std(y, ddof=1))
    if kind == "naive":
        est = naive
    elif kind == "linear":
        n, p = dataset.X.shape
        if n <= p + 1:
            est = naive
        else:
            Z = np.column_stack([np.ones(n), dataset.X])
            coef, _, rank, _ = np.linalg.lstsq(Z, y, rcond=None)
            resid = y - Z @ coef
            dof = n - rank
            est = float(np.sqrt(resid @ resid / dof)) if dof > 0 else naive
    else:
        raise ValueError(f"unknown sigma_hat kind {kind!r}")
    return max(est, 1e-8)


class ChainState:
    """Mutable state of one chain; single-threaded by contract."""

    def __init__(
        self,
        dataset: Dataset,
        hp: HyperParams,
        mode: str,
        rng: np.random.Generator,
        cutpoints: list[np.ndarray],
        x_test: Optional[np.ndarray] = None,
        fix_sigma: Optional[float] = None,
    ):
        if mode not in ("bart", "mbart"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.rng = rng
        self.X = dataset.X
        self.y = dataset.y
        self.cutpoints = cutpoints
        self.n_cutpoints = [len(g) for g in cutpoints]
        self.S: tuple = tuple(sorted(hp.S)) if mode == "mbart" else ()

        shat = sigma_hat(dataset, hp.sigma_est)
        if hp.sigma_mu is None:
            mu_mu, sm = calibrate_mu_prior(hp.k, hp.m)
            hp = replace(hp, mu_mu=mu_mu, sigma_mu=sm)
        if hp.lam is None:
            hp = replace(hp, lam=calibrate_sigma_prior(shat, hp.nu, hp.q))
        self.hp = hp
        self.sigma_hat = shat
        self.fix_sigma = fix_sigma
        self.sigma = float(fix_sigma) if fix_sigma is not None else shat

        n = dataset.n
        m = hp.m
        self.trees = [Tree.root(0.0) for _ in range(m)]
        self.fits = np.zeros((m, n))
        self.total_fit = np.zeros(n)
        all_rows = np.arange(n)
        self.assign = [{1: all_rows.copy()} for _ in range(m)]
        self.split_options = [self._scan_tree(j) for j in range(m)]
        self.death_options: list[dict] = [{} for _ in range(m)]
        self.child_elig: list[dict] = [{} for _ in range(m)]
        self.row_order: list = [None] * m
        self.row_order_test: list = [None] * m
        self.regions = [leaf_regions(t, dataset.p) for t in self.trees]
        if mode == "mbart":
            self.neighbors = [leaf_neighbors(rg, self.S) for rg in self.regions]
        else:
            self.neighbors = [None] * m

        self.x_test = x_test
        self.test_active = False
        self._resid = np.empty(n)

    # ---- caches ---------------------------------------------------------

    def _scan_leaf(self, j: int, leaf: int) -> Optional[dict]:
        if depth_of(leaf) >= self.hp.max_depth:
            return None
        adm = admissible_split_ranges(
            self.trees[j], leaf, self.assign[j][leaf], self.X, self.cutpoints, self.hp.min_leaf
        )
        return adm or None

    def _scan_tree(self, j: int) -> dict:
        out = {}
        for leaf in self.trees[j].leaves:
            adm = self._scan_leaf(j, leaf)
            if adm:
                out[leaf] = adm
        return out

    def activate_test_tracking(self) -> None:
        """Start incremental test-set fit maintenance (post burn-in)."""
        if self.x_test is None or self.test_active:
            return
        m = self.hp.m
        nt = self.x_test.shape[0]
        self.test_fits = np.empty((m, nt))
        self.assign_test = []
        for j in range(m):
            amap = assign_rows(self.trees[j], self.x_test, self.cutpoints)
            self.assign_test.append(amap)
            for lab, rows_t in amap.items():
                self.test_fits[j, rows_t] = self.trees[j].leaves[lab]
        self.test_total = self.test_fits.sum(axis=0)
        self.test_active = True

    def _refresh_geometry(self, j: int) -> None:
        self.regions[j] = leaf_regions(self.trees[j], len(self.cutpoints))
        self.death_options[j].clear()
        self.child_elig[j].clear()
        self.row_order[j] = None
        self.row_order_test[j] = None
        if self.mode == "mbart":
            self.neighbors[j] = leaf_neighbors(self.regions[j], self.S)

    def _row_order(self, j: int, labels: list):
        cached = self.row_order[j]
        if cached is None or cached[0] != labels:
            assign = self.assign[j]
            counts = np.array([assign[lab].size for lab in labels])
            rows_cat = np.concatenate([assign[lab] for lab in labels])
            offsets = np.zeros(len(labels), dtype=np.intp)
            np.cumsum(counts[:-1], out=offsets[1:])
            cached = self.row_order[j] = (labels, rows_cat, counts, offsets)
        return cached

    def _row_order_t(self, j: int, labels: list):
        cached = self.row_order_test[j]
        if cached is None or cached[0] != labels:
            at = self.assign_test[j]
            counts = np.array([at[lab].size for lab in labels])
            rows_cat = np.concatenate([at[lab] for lab in labels])
            cached = self.row_order_test[j] = (labels, rows_cat, counts)
        return cached

    def apply_tree_mus(self, j: int, labels: list, old: np.ndarray, new: np.ndarray) -> None:
        """Write a whole sweep of leaf means into the fit caches at once."""
        if len(labels) == 1:
            self.fits[j, :] = new[0]
            self.total_fit += new[0] - old[0]
            if self.test_active:
                self.test_fits[j, :] = new[0]
                self.test_total += new[0] - old[0]
            return
        _, rows_cat, counts, _ = self._row_order(j, labels)
        self.fits[j, rows_cat] = np.repeat(new, counts)
        self.total_fit[rows_cat] += np.repeat(new - old, counts)
        if self.test_active:
            _, rows_t, counts_t = self._row_order_t(j, labels)
            self.test_fits[j, rows_t] = np.repeat(new, counts_t)
            self.test_total[rows_t] += np.repeat(new - old, counts_t)

    # ---- residual cache -------------------------------------------------

    def partial_residual(self, j: int) -> np.ndarray:
        """y minus the fit of every tree except j (most recent values)."""
        np.subtract(self.y, self.total_fit, out=self._resid)
        self._resid += self.fits[j]
        return self._resid

    def set_leaf_mu(self, j: int, leaf: int, mu: float) -> None:
        rows = self.assign[j][leaf]
        old = self.trees[j].leaves[leaf]
        self.trees[j].leaves[leaf] = mu
        if rows.size == self.y.size:  # single-leaf tree: skip fancy indexing
            self.fits[j, :] = mu
            self.total_fit += mu - old
        else:
            self.fits[j, rows] = mu
            self.total_fit[rows] += mu - old
        if self.test_active:
            rows_t = self.assign_test[j][leaf]
            if rows_t.size == self.test_total.size:
                self.test_fits[j, :] = mu
                self.test_total += mu - old
            else:
                self.test_fits[j, rows_t] = mu
                self.test_total[rows_t] += mu - old

    def check_invariants(self) -> None:
        for j, tree in enumerate(self.trees):
            fresh = evaluate_tree_rows(tree, self.X, self.cutpoints)
            if not np.allclose(fresh, self.fits[j], atol=1e-10):
                raise InvariantError(f"fit cache of tree {j} is stale")
            if self.mode == "mbart" and not check_tree_monotone(
                tree, self.S, len(self.cutpoints)
            ):
                raise InvariantError(f"tree {j} violates monotonicity")
        if not np.allclose(self.fits.sum(axis=0), self.total_fit, atol=1e-8):
            raise InvariantError("total fit cache is stale")


def partial_residual(state: ChainState, j: int) -> np.ndarray:
    return state.partial_residual(j).copy()


# ---- leaf classification and intervals ----------------------------------


def _leaf_interval(state: ChainState, j: int, leaf: int) -> Interval:
    above, below = state.neighbors[j][leaf]
    return interval_from_neighbors(above, below, state.trees[j].leaves)


def _leaf_prior(state: ChainState, constrained: bool) -> tuple[float, float]:
    mean, sd = mu_prior(constrained, state.hp)
    return mean, sd * sd


def _child_constraints(
    state: ChainState, j: int, leaf: int, rule: SplitRule
) -> tuple[Interval, Interval, bool]:
    """Intervals the existing leaves impose on the would-be children of a split."""
    regions = state.regions[j]
    left, right = split_region(regions[leaf], rule)
    mus = state.trees[j].leaves
    out = []
    for child in (left, right):
        a, b = -math.inf, math.inf
        for lab, reg in regions.items():
            if lab == leaf:
                continue
            if is_above_neighbor(reg, child, state.S):
                b = min(b, mus[lab])
            if is_above_neighbor(child, reg, state.S):
                a = max(a, mus[lab])
        out.append(Interval(a, b))
    return out[0], out[1], rule.var in state.S


def _is_constrained(interval: Interval, ordered: bool = False) -> bool:
    return ordered or interval.a > -math.inf or interval.b < math.inf


# ---- tree prior ----------------------------------------------------------


def _log_birth_prior_for_region(state: ChainState, region, node: int, rule: SplitRule) -> float:
    """log p(T with a split at node) - log p(T without it), rule prior included."""
    hp = state.hp
    d = depth_of(node)
    ps_d = split_prob(d, hp.alpha, hp.beta)
    ps_child = split_prob(d + 1, hp.alpha, hp.beta)
    n_vars = 0
    n_cuts_rule = 0
    for var, k in enumerate(state.n_cutpoints):
        lo, hi = admissible_index_range(region, var, k)
        if hi > lo:
            n_vars += 1
            if var == rule.var:
                n_cuts_rule = hi - lo
    return (
        math.log(ps_d)
        + 2.0 * math.log1p(-ps_child)
        - math.log1p(-ps_d)
        - math.log(n_vars)
        - math.log(n_cuts_rule)
    )


def _log_birth_prior(state: ChainState, j: int, leaf: int, rule: SplitRule) -> float:
    return _log_birth_prior_for_region(state, state.regions[j][leaf], leaf, rule)


# ---- marginals for a move ------------------------------------------------


def _single_log_marginal(state: ChainState, j: int, stats: LeafStats, interval: Interval) -> float:
    constrained = state.mode == "mbart" and _is_constrained(interval)
    mean, var = _leaf_prior(state, constrained)
    if state.mode == "bart":
        interval = Interval()
    return leaf_log_marginal_constrained(stats, interval, mean, var, state.sigma)


def _pair_log_marginal(
    state: ChainState,
    stats_l: LeafStats,
    stats_r: LeafStats,
    constraint: tuple[Interval, Interval, bool],
) -> float:
    int_l, int_r, ordered = constraint
    if state.mode == "bart":
        mean, var = _leaf_prior(state, False)
        free = Interval()
        return leaf_log_marginal_constrained(
            stats_l, free, mean, var, state.sigma
        ) + leaf_log_marginal_constrained(stats_r, free, mean, var, state.sigma)
    if ordered:
        mean, var = _leaf_prior(state, True)
        return pair_log_marginal_grid(
            stats_l,
            stats_r,
            constraint,
            (mean, var),
            (mean, var),
            state.sigma,
            state.hp.grid_points,
        )
    # no order coupling: the integral factorizes into two exact univariate terms
    out = 0.0
    for stats, iv in ((stats_l, int_l), (stats_r, int_r)):
        mean, var = _leaf_prior(state, _is_constrained(iv))
        out += leaf_log_marginal_constrained(stats, iv, mean, var, state.sigma)
    return out


def _draw_single_mu(state: ChainState, stats: LeafStats, interval: Interval) -> float:
    constrained = state.mode == "mbart" and _is_constrained(interval)
    mean, var = _leaf_prior(state, constrained)
    post_mean, post_var = conjugate_posterior(stats, mean, var, state.sigma)
    sd = math.sqrt(post_var)
    if state.mode == "bart" or not constrained:
        return post_mean + sd * float(state.rng.standard_normal())
    return draw_truncated_normal(state.rng, post_mean, sd, interval.a, interval.b)


def _draw_pair_mu(
    state: ChainState,
    stats_l: LeafStats,
    stats_r: LeafStats,
    constraint: tuple[Interval, Interval, bool],
) -> tuple[float, float]:
    int_l, int_r, ordered = constraint
    if state.mode == "mbart" and ordered:
        mean, var = _leaf_prior(state, True)
        return draw_mu_pair(
            stats_l,
            stats_r,
            constraint,
            (mean, var),
            (mean, var),
            state.sigma,
            state.hp.grid_points,
            state.rng,
        )
    return (
        _draw_single_mu(state, stats_l, int_l),
        _draw_single_mu(state, stats_r, int_r),
    )


# ---- the MH structure move ----------------------------------------------


def mh_step_tree(state: ChainState, j: int, r: Optional[np.ndarray] = None) -> bool:
    """One birth/death proposal on tree j; returns the accept flag."""
    if r is None:
        r = state.partial_residual(j)
    rng = state.rng
    tree = state.trees[j]
    birth_set = state.split_options[j]
    birth_leaves = list(birth_set)
    death_nodes = death_eligible_nodes(tree)
    nb, nd = len(birth_leaves), len(death_nodes)
    if nb == 0 and nd == 0:
        return False
    if nd == 0:
        p_birth = 1.0
    elif nb == 0:
        p_birth = 0.0
    else:
        p_birth = 0.5
    do_birth = p_birth == 1.0 or (p_birth > 0.0 and rng.random() < p_birth)

    if do_birth:
        return _birth_move(state, j, r, birth_leaves, nd, p_birth)
    return _death_move(state, j, r, death_nodes, birth_set, nb, 1.0 - p_birth)


def _birth_move(
    state: ChainState,
    j: int,
    r: np.ndarray,
    birth_leaves: list[int],
    nd: int,
    p_birth: float,
) -> bool:
    rng = state.rng
    tree = state.trees[j]
    leaf = birth_leaves[int(rng.integers(len(birth_leaves)))]
    options = state.split_options[j][leaf]
    variables = list(options)
    var = variables[int(rng.integers(len(variables)))]
    k0, k1 = options[var]
    cut = k0 + int(rng.integers(k1 - k0))
    rule = SplitRule(var, cut)

    rows = state.assign[j][leaf]
    go_left = state.X[rows, var] <= state.cutpoints[var][cut]
    rows_l, rows_r = rows[go_left], rows[~go_left]
    stats_l = LeafStats.of(r[rows_l])
    stats_r = LeafStats.of(r[rows_r])
    stats_0 = LeafStats(
        stats_l.count + stats_r.count,
        stats_l.total + stats_r.total,
        stats_l.total_sq + stats_r.total_sq,
    )

    log_q_fwd = (
        math.log(p_birth)
        - math.log(len(birth_leaves))
        - math.log(len(variables))
        - math.log(k1 - k0)
    )
    # reverse move: a death in the proposed tree; the birth makes `leaf`
    # death-eligible and can only strip that status from its parent
    parent_was_eligible = leaf > 1 and (leaf ^ 1) in tree.leaves
    nd_star = nd + 1 - (1 if parent_was_eligible else 0)
    if len(birth_leaves) > 1:
        p_death_star = 0.5
    else:
        cache = state.child_elig[j]
        key = (leaf, var, cut)
        children_eligible = cache.get(key)
        if children_eligible is None:
            children_eligible = _children_eligible(state, j, leaf, rule, rows_l, rows_r)
            cache[key] = children_eligible
        p_death_star = 0.5 if children_eligible else 1.0
    log_q_rev = math.log(p_death_star) - math.log(nd_star)

    if state.mode == "mbart":
        constraint = _child_constraints(state, j, leaf, rule)
        interval_0 = _leaf_interval(state, j, leaf)
    else:
        constraint = _FREE_PAIR
        interval_0 = _FREE
    log_m_new = _pair_log_marginal(state, stats_l, stats_r, constraint)
    log_m_old = _single_log_marginal(state, j, stats_0, interval_0)
    log_prior = _log_birth_prior(state, j, leaf, rule)

    log_alpha = log_q_rev - log_q_fwd + log_m_new - log_m_old + log_prior
    if not (log_alpha >= 0.0 or math.log(rng.random()) < log_alpha):
        return False

    mu_l, mu_r = _draw_pair_mu(state, stats_l, stats_r, constraint)
    mu_old = tree.leaves[leaf]
    tree.birth(leaf, rule, mu_l, mu_r)
    assign = state.assign[j]
    del assign[leaf]
    assign[2 * leaf] = rows_l
    assign[2 * leaf + 1] = rows_r
    state.fits[j, rows_l] = mu_l
    state.fits[j, rows_r] = mu_r
    state.total_fit[rows_l] += mu_l - mu_old
    state.total_fit[rows_r] += mu_r - mu_old
    if state.test_active:
        _split_test_rows(state, j, leaf, rule, mu_l, mu_r, mu_old)
    birth_set = state.split_options[j]
    birth_set.pop(leaf, None)
    for child in (2 * leaf, 2 * leaf + 1):
        adm = state._scan_leaf(j, child)
        if adm:
            birth_set[child] = adm
    state._refresh_geometry(j)
    return True


def _children_eligible(
    state: ChainState, j: int, leaf: int, rule: SplitRule, rows_l: np.ndarray, rows_r: np.ndarray
) -> bool:
    """Would either child of the proposed split admit a further split?"""
    if depth_of(leaf) + 1 >= state.hp.max_depth:
        return False
    left, right = split_region(state.regions[j][leaf], rule)
    for region, rows in ((left, rows_l), (right, rows_r)):
        if region_has_split(region, rows, state.X, state.cutpoints, state.hp.min_leaf):
            return True
    return False


def _death_move(
    state: ChainState,
    j: int,
    r: np.ndarray,
    death_nodes: list[int],
    birth_set: dict,
    nb: int,
    p_death: float,
) -> bool:
    rng = state.rng
    tree = state.trees[j]
    node = death_nodes[int(rng.integers(len(death_nodes)))]
    rule = tree.splits[node]
    left, right = 2 * node, 2 * node + 1
    rows_l, rows_r = state.assign[j][left], state.assign[j][right]
    stats_l = LeafStats.of(r[rows_l])
    stats_r = LeafStats.of(r[rows_r])
    stats_0 = LeafStats(
        stats_l.count + stats_r.count,
        stats_l.total + stats_r.total,
        stats_l.total_sq + stats_r.total_sq,
    )

    log_q_fwd = math.log(p_death) - math.log(len(death_nodes))
    # reverse move: rebirth of this node in the collapsed tree
    nb_star = nb - (left in birth_set) - (right in birth_set) + 1
    nd_star = len(death_nodes) - 1 + (
        1 if _sibling_is_leaf(tree, node) else 0
    )
    p_birth_star = 1.0 if nd_star == 0 else 0.5
    rev_options = state.death_options[j].get(node)
    if rev_options is None:
        rev_options = _merged_admissible(state, j, node, rows_l, rows_r)
        state.death_options[j][node] = rev_options
    n_vars_star = len(rev_options)
    if rule.var in rev_options:
        k0, k1 = rev_options[rule.var]
        n_cuts_star = k1 - k0
    else:
        n_cuts_star = 0
    if n_cuts_star == 0:
        raise InvariantError("existing split not admissible in reverse scan")
    log_q_rev = (
        math.log(p_birth_star)
        - math.log(nb_star)
        - math.log(n_vars_star)
        - math.log(n_cuts_star)
    )

    if state.mode == "mbart":
        int_l = _leaf_interval(state, j, left)
        int_r = _leaf_interval(state, j, right)
        constraint = (int_l, int_r, rule.var in state.S)
        interval_0 = _merged_interval(state, j, node)
    else:
        constraint = _FREE_PAIR
        interval_0 = _FREE
    log_m_old = _pair_log_marginal(state, stats_l, stats_r, constraint)
    log_m_new = _single_log_marginal(state, j, stats_0, interval_0)
    log_prior = -_log_birth_prior_at_interior(state, j, node, rule)

    log_alpha = log_q_rev - log_q_fwd + log_m_new - log_m_old + log_prior
    if not (log_alpha >= 0.0 or math.log(rng.random()) < log_alpha):
        return False

    mu_0 = _draw_single_mu(state, stats_0, interval_0)
    mu_l, mu_r = tree.leaves[left], tree.leaves[right]
    tree.death(node, mu_0)
    assign = state.assign[j]
    rows = np.concatenate([rows_l, rows_r])
    del assign[left], assign[right]
    assign[node] = rows
    state.fits[j, rows] = mu_0
    state.total_fit[rows_l] += mu_0 - mu_l
    state.total_fit[rows_r] += mu_0 - mu_r
    if state.test_active:
        _merge_test_rows(state, j, node, mu_0, mu_l, mu_r)
    birth_set.pop(left, None)
    birth_set.pop(right, None)
    birth_set[node] = rev_options
    state._refresh_geometry(j)
    return True


def _sibling_is_leaf(tree: Tree, node: int) -> bool:
    if node == 1:
        return False
    sib = node ^ 1
    return sib in tree.leaves


def _merged_admissible(
    state: ChainState, j: int, node: int, rows_l: np.ndarray, rows_r: np.ndarray
) -> dict:
    """Admissible split ranges the collapsed leaf would offer (reverse q)."""
    region = _node_region(state, j, node)
    rows = np.concatenate([rows_l, rows_r])
    return split_ranges_for_region(region, rows, state.X, state.cutpoints, state.hp.min_leaf)


def _merged_interval(state: ChainState, j: int, node: int) -> Interval:
    """Feasibility interval of the collapsed leaf against the other leaves."""
    regions = state.regions[j]
    left, right = 2 * node, 2 * node + 1
    merged = _node_region(state, j, node)  # the parent box of the two children
    mus = state.trees[j].leaves
    a, b = -math.inf, math.inf
    for lab, reg in regions.items():
        if lab in (left, right):
            continue
        if is_above_neighbor(reg, merged, state.S):
            b = min(b, mus[lab])
        if is_above_neighbor(merged, reg, state.S):
            a = max(a, mus[lab])
    return Interval(a, b)


def _log_birth_prior_at_interior(state: ChainState, j: int, node: int, rule: SplitRule) -> float:
    """Birth prior ratio evaluated at an existing interior node (for deaths)."""
    return _log_birth_prior_for_region(state, _node_region(state, j, node), node, rule)


def _node_region(state: ChainState, j: int, node: int):
    from .tree import _interior_region

    return _interior_region(state.trees[j], node, len(state.cutpoints))


def _split_test_rows(
    state: ChainState, j: int, leaf: int, rule: SplitRule, mu_l: float, mu_r: float, mu_old: float
) -> None:
    at = state.assign_test[j]
    rows = at.pop(leaf)
    go_left = state.x_test[rows, rule.var] <= state.cutpoints[rule.var][rule.cut]
    rows_l, rows_r = rows[go_left], rows[~go_left]
    at[2 * leaf] = rows_l
    at[2 * leaf + 1] = rows_r
    state.test_fits[j, rows_l] = mu_l
    state.test_fits[j, rows_r] = mu_r
    state.test_total[rows_l] += mu_l - mu_old
    state.test_total[rows_r] += mu_r - mu_old


def _merge_test_rows(
    state: ChainState, j: int, node: int, mu_0: float, mu_l: float, mu_r: float
) -> None:
    at = state.assign_test[j]
    rows_l = at.pop(2 * node)
    rows_r = at.pop(2 * node + 1)
    at[node] = np.concatenate([rows_l, rows_r])
    state.test_fits[j, at[node]] = mu_0
    state.test_total[rows_l] += mu_0 - mu_l
    state.test_total[rows_r] += mu_0 - mu_r


# ---- leaf-mean refresh and sigma ----------------------------------------


def refresh_leaf_mus(state: ChainState, j: int, r: Optional[np.ndarray] = None) -> None:
    """Exact full-conditional redraw of every leaf mean of tree j, label order."""
    if r is None:
        r = state.partial_residual(j)
    tree = state.trees[j]
    hp = state.hp
    sigma2 = state.sigma**2
    mbart = state.mode == "mbart"
    labels = tree.leaf_labels()
    b = len(labels)
    old = np.array([tree.leaves[lab] for lab in labels])
    if b == 1:
        counts = np.array([r.size])
        totals = np.array([r.sum()])
    else:
        _, rows_cat, counts, offsets = state._row_order(j, labels)
        totals = np.add.reduceat(r[rows_cat], offsets)

    if not mbart:
        mean, sd = mu_prior(False, hp)
        var = sd * sd
        post_var = 1.0 / (counts / sigma2 + 1.0 / var)
        post_mean = post_var * (totals / sigma2 + mean / var)
        new = post_mean + np.sqrt(post_var) * state.rng.standard_normal(b)
        for idx, leaf in enumerate(labels):
            tree.leaves[leaf] = float(new[idx])
        state.apply_tree_mus(j, labels, old, new)
        return

    new = np.empty(b)
    neighbors = state.neighbors[j]
    for idx, leaf in enumerate(labels):
        above, below = neighbors[leaf]
        interval = interval_from_neighbors(above, below, tree.leaves)
        if interval.infeasible:
            raise InvariantError(f"leaf {leaf} of tree {j} has an infeasible interval")
        constrained = bool(above or below)
        mean, sd = mu_prior(constrained, hp)
        var = sd * sd
        post_var = 1.0 / (counts[idx] / sigma2 + 1.0 / var)
        post_mean = post_var * (totals[idx] / sigma2 + mean / var)
        post_sd = math.sqrt(post_var)
        if constrained:
            mu = draw_truncated_normal(state.rng, post_mean, post_sd, interval.a, interval.b)
        else:
            mu = post_mean + post_sd * float(state.rng.standard_normal())
        tree.leaves[leaf] = mu  # later intervals in this sweep see the new value
        new[idx] = mu
    state.apply_tree_mus(j, labels, old, new)


def draw_sigma(state: ChainState) -> float:
    """Scaled-inverse-chi-square full conditional given the current total fit."""
    hp = state.hp
    e = state.y - state.total_fit
    ss = float(e @ e)
    n = e.size
    chi2 = float(state.rng.chisquare(hp.nu + n))
    return math.sqrt((hp.nu * hp.lam + ss) / chi2)


# ---- the chain driver ----------------------------------------------------


def run_chain(
    dataset: Dataset,
    hp: HyperParams,
    mode: str,
    n_burn: int = 500,
    n_draw: int = 1000,
    thin: int = 1,
    rng: RngLike = 0,
    cutpoints: Optional[list[np.ndarray]] = None,
    max_cuts: int = 100,
    x_test: Optional[np.ndarray] = None,
    collect_draws: bool = True,
    fix_sigma: Optional[float] = None,
    check_invariants: bool = False,
) -> DrawSet:
    """Run one chain and return the kept draws.

    Trees start as single roots with mean zero and sigma at its data-based
    overestimate.  Each iteration updates every tree (structure move plus
    mean refresh) and then sigma; the first n_burn iterations are discarded
    and every thin-th of the next n_draw*thin is kept.  Fully reproducible
    from (rng, hp, data).
    """
    if n_burn < 0 or n_draw < 0:
        raise ValueError("n_burn and n_draw must be nonnegative")
    if thin < 1:
        raise ValueError("thin must be a positive integer")
    gen = as_generator(rng)
    seed_note = rng if isinstance(rng, int) else None
    if cutpoints is None:
        cutpoints = build_cutpoints(dataset, max_cuts)
    x_test_internal = None
    if x_test is not None:
        signs = dataset.col_signs
        x_test_internal = np.asarray(x_test, dtype=float) * signs
    state = ChainState(dataset, hp, mode, gen, cutpoints, x_test_internal, fix_sigma)

    n_iter = n_burn + n_draw * thin
    sigma_trace = np.empty(n_iter)
    forests: list[Forest] = []
    sigmas: list[float] = []
    test_draws = [] if x_test is not None else None
    leaf_count_sum = 0
    leaf_count_n = 0

    for it in range(n_iter):
        if it == n_burn:
            state.activate_test_tracking()
        for j in range(state.hp.m):
            r = state.partial_residual(j)
            mh_step_tree(state, j, r)
            refresh_leaf_mus(state, j, r)
        if fix_sigma is None:
            state.sigma = draw_sigma(state)
        sigma_trace[it] = state.sigma
        if check_invariants:
            state.check_invariants()
        if it >= n_burn and (it - n_burn) % thin == 0:
            sigmas.append(state.sigma)
            if collect_draws:
                forests.append(Forest([t.copy() for t in state.trees], cutpoints))
            if test_draws is not None:
                if not state.test_active:  # n_burn == 0 edge
                    state.activate_test_tracking()
                test_draws.append(state.test_total.copy())
            leaf_count_sum += sum(t.n_leaves() for t in state.trees)
            leaf_count_n += state.hp.m

    meta = {
        "mode": mode,
        "seed": seed_note,
        "hyperparams": state.hp,
        "transforms": dataset.transforms(),
        "n_train": dataset.n,
        "sigma_hat": state.sigma_hat,
        "mean_tree_size": (leaf_count_sum / leaf_count_n) if leaf_count_n else float("nan"),
    }
    return DrawSet(
        forests=forests,
        sigmas=np.array(sigmas),
        cutpoints=cutpoints,
        meta=meta,
        sigma_trace=sigma_trace,
        test_draws=np.array(test_draws) if test_draws else None,
    )
