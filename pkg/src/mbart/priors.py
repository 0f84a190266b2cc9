"""Prior specification and calibration for the tree ensemble.

Covers the depth-penalized tree-shape prior, the scaled-inverse-chi-square
noise prior with quantile calibration, and the leaf-mean prior whose
variance is inflated by pi/(pi-1) for constrained leaves so that the
marginal variance under an order constraint matches the unconstrained one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import chi2

from .errors import InvariantError
from .tree import Tree, admissible_index_range, depth_of, leaf_region

# Variance inflation for constrained leaf means: if two iid N(0, c*v)
# means are order-constrained, each marginal variance is c*v*(1 - 1/pi),
# which equals v exactly at c = pi/(pi-1).
CONSTRAINED_VARIANCE_INFLATION = math.pi / (math.pi - 1.0)


@dataclass(frozen=True)
class HyperParams:
    """All prior constants for one fit; immutable once constructed."""

    alpha: float = 0.95
    beta: float = 2.0
    nu: float = 3.0
    q: float = 0.90
    k: float = 2.0
    m: int = 200
    mu_mu: float = 0.0
    sigma_mu: Optional[float] = None  # calibrated from (k, m) when None
    lam: Optional[float] = None  # calibrated from the data when None
    S: frozenset = field(default_factory=frozenset)
    min_leaf: int = 5
    grid_points: int = 64
    max_depth: int = 20
    sigma_est: str = "linear"  # "linear" or "naive" sigma-hat source

    @property
    def c(self) -> float:
        return CONSTRAINED_VARIANCE_INFLATION

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must be in [0, 1), got {self.alpha}")
        if self.beta < 0.0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.m < 1:
            raise ValueError("m must be a positive integer")
        if self.grid_points < 8:
            raise ValueError("grid_points must be at least 8")


def default_hyperparams(mode: str, S: Sequence[int] = (), **overrides) -> HyperParams:
    """Defaults per mode: (alpha, beta) = (.95, 2) for bart, (.25, .8) for mbart."""
    if mode not in ("bart", "mbart"):
        raise ValueError(f"unknown mode {mode!r}")
    base = dict(alpha=0.95, beta=2.0) if mode == "bart" else dict(alpha=0.25, beta=0.8)
    base.update(overrides)
    hp = HyperParams(S=frozenset(int(i) for i in S), **base)
    if hp.sigma_mu is None:
        mu_mu, sigma_mu = calibrate_mu_prior(hp.k, hp.m)
        hp = replace(hp, mu_mu=mu_mu, sigma_mu=sigma_mu)
    return hp


def split_prob(depth: int, alpha: float, beta: float) -> float:
    """Probability that a node at the given depth is interior: alpha*(1+d)^-beta."""
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    return alpha * (1.0 + depth) ** (-beta)


def sample_tree_skeleton(
    alpha: float, beta: float, rng: np.random.Generator, max_depth: int = 20
) -> set[int]:
    """Draw a tree shape from the depth prior; returns the leaf label set.

    Termination is a.s. for beta > 0; the depth cap is a safety valve with
    no measurable distributional effect at the default settings.
    """
    leaves: set[int] = set()
    stack = [1]
    while stack:
        label = stack.pop()
        d = depth_of(label)
        if d < max_depth and rng.random() < split_prob(d, alpha, beta):
            stack.append(2 * label)
            stack.append(2 * label + 1)
        else:
            leaves.add(label)
    return leaves


def calibrate_sigma_prior(sigma_hat: float, nu: float, q: float) -> float:
    """Scale lambda such that P(sigma < sigma_hat) = q under sigma^2 ~ nu*lam/chi2_nu."""
    if sigma_hat <= 0.0:
        raise ValueError(f"sigma_hat must be positive, got {sigma_hat}")
    return sigma_hat**2 * chi2.ppf(1.0 - q, nu) / nu


def calibrate_mu_prior(k: float, m: int) -> tuple[float, float]:
    """(mu_mu, sigma_mu) = (0, 0.5/(k*sqrt(m))) for y rescaled to [-0.5, 0.5]."""
    return 0.0, 0.5 / (k * math.sqrt(m))


def mu_prior(is_constrained: bool, hp: HyperParams) -> tuple[float, float]:
    """(mean, sd) of the leaf-mean prior; constrained leaves get sd sqrt(c)*sigma_mu.

    A leaf counts as constrained when its feasible interval has a finite
    endpoint or it takes part in an ordered pair constraint.
    """
    if hp.sigma_mu is None:
        raise InvariantError("sigma_mu not calibrated")
    sd = hp.sigma_mu * (math.sqrt(hp.c) if is_constrained else 1.0)
    return hp.mu_mu, sd


def _birth_node(t_small: Tree, t_big: Tree) -> int:
    """Label at which t_big extends t_small by one split; raises if not one move apart."""
    extra = set(t_big.splits) - set(t_small.splits)
    if len(extra) != 1:
        raise InvariantError("trees are not related by a single birth/death")
    (node,) = extra
    if node not in t_small.leaves:
        raise InvariantError("birth node is not a leaf of the smaller tree")
    if 2 * node not in t_big.leaves or 2 * node + 1 not in t_big.leaves:
        raise InvariantError("birth children are not leaves of the bigger tree")
    same_splits = {lab: r for lab, r in t_big.splits.items() if lab != node}
    if same_splits != t_small.splits:
        raise InvariantError("trees differ away from the birth node")
    if set(t_big.leaves) - {2 * node, 2 * node + 1} != set(t_small.leaves) - {node}:
        raise InvariantError("leaf sets differ away from the birth node")
    return node


def log_tree_prior_ratio(
    t_star: Tree,
    t0: Tree,
    hp: HyperParams,
    n_cutpoints: Sequence[int],
) -> float:
    """log p(T*) - log p(T0) for trees one birth or death apart.

    The rule prior is uniform over variables with a nonempty admissible cut
    range at the node (induced by ancestors) and uniform over that range.
    """
    if len(t_star.splits) > len(t0.splits):
        sign, small, big = 1.0, t0, t_star
    elif len(t_star.splits) < len(t0.splits):
        sign, small, big = -1.0, t_star, t0
    else:
        raise InvariantError("trees have equal size; not a birth/death pair")
    node = _birth_node(small, big)
    rule = big.splits[node]
    d = depth_of(node)
    ps_d = split_prob(d, hp.alpha, hp.beta)
    ps_child = split_prob(d + 1, hp.alpha, hp.beta)

    region = leaf_region(small, node, len(n_cutpoints))
    n_vars = 0
    n_cuts_rule = 0
    for var in range(len(n_cutpoints)):
        lo, hi = admissible_index_range(region, var, n_cutpoints[var])
        if hi > lo:
            n_vars += 1
            if var == rule.var:
                n_cuts_rule = hi - lo
    if n_cuts_rule == 0:
        raise InvariantError("birth rule is not admissible at its node")

    log_ratio = (
        math.log(ps_d)
        + 2.0 * math.log1p(-ps_child)
        - math.log1p(-ps_d)
        - math.log(n_vars)
        - math.log(n_cuts_rule)
    )
    return sign * log_ratio
