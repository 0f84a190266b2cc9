"""Region adjacency calculus for monotone trees.

Two leaf regions constrain each other's means when they share a boundary in
a constrained coordinate and genuinely adjoin there: the boxes must overlap
in every other coordinate with positive width, otherwise no point of one
region can be reached from the other by a move in the constrained
coordinate alone.  All comparisons happen in cut-index space, so boundary
equality is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .tree import Region, SplitRule, Tree, evaluate_tree, leaf_regions


@dataclass(frozen=True)
class Interval:
    """Allowed range [a, b] for a leaf mean; infinities mean unconstrained."""

    a: float = -math.inf
    b: float = math.inf

    @property
    def infeasible(self) -> bool:
        return self.a > self.b


def _check_dims(ra: Region, rb: Region) -> None:
    if ra.p != rb.p:
        raise ValueError(f"region dimensions differ: {ra.p} vs {rb.p}")


def is_separated(ra: Region, rb: Region) -> bool:
    """True iff some coordinate has a strict gap between the two boxes."""
    _check_dims(ra, rb)
    for i in range(ra.p):
        ua, lb = ra.upper[i], rb.lower[i]
        if ua is not None and lb is not None and ua < lb:
            return True
        la, ub = ra.lower[i], rb.upper[i]
        if la is not None and ub is not None and la > ub:
            return True
    return False


def _overlaps(ra: Region, rb: Region, skip: int) -> bool:
    """Positive-width intersection in every coordinate except ``skip``."""
    for j in range(ra.p):
        if j == skip:
            continue
        lo = max(
            (v for v in (ra.lower[j], rb.lower[j]) if v is not None), default=None
        )
        hi = min(
            (v for v in (ra.upper[j], rb.upper[j]) if v is not None), default=None
        )
        if lo is not None and hi is not None and lo >= hi:
            return False
    return True


def is_above_neighbor(ra: Region, rb: Region, S: Iterable[int]) -> bool:
    """True iff ra adjoins rb from above in some constrained coordinate.

    Requires finite boundary equality ra.lower[i] == rb.upper[i] for an
    i in S, plus positive overlap in every other coordinate (so a small
    move in coordinate i actually crosses between the regions).
    """
    _check_dims(ra, rb)
    for i in S:
        la, ub = ra.lower[i], rb.upper[i]
        if la is not None and ub is not None and la == ub and _overlaps(ra, rb, i):
            return True
    return False


def is_below_neighbor(ra: Region, rb: Region, S: Iterable[int]) -> bool:
    return is_above_neighbor(rb, ra, S)


def leaf_neighbors(
    regions: dict[int, Region], S: Iterable[int]
) -> dict[int, tuple[list[int], list[int]]]:
    """Per leaf, the labels of its (above, below) neighbors under S."""
    S = tuple(S)
    labels = sorted(regions)
    out: dict[int, tuple[list[int], list[int]]] = {lab: ([], []) for lab in labels}
    for idx, a in enumerate(labels):
        for b in labels[idx + 1 :]:
            if is_above_neighbor(regions[a], regions[b], S):
                out[b][0].append(a)  # a sits above b
                out[a][1].append(b)
            if is_above_neighbor(regions[b], regions[a], S):
                out[a][0].append(b)
                out[b][1].append(a)
    return out


def interval_from_neighbors(
    above: Iterable[int], below: Iterable[int], mus: dict[int, float]
) -> Interval:
    a = -math.inf
    for lab in below:
        if lab in mus:
            a = max(a, mus[lab])
    b = math.inf
    for lab in above:
        if lab in mus:
            b = min(b, mus[lab])
    return Interval(a, b)


def feasible_interval(
    tree: Tree,
    mus: dict[int, float],
    target_leaf: int,
    S: Iterable[int],
    p: int,
) -> Interval:
    """Range the target leaf's mean may occupy given the other leaves' means.

    ``mus`` maps leaf labels to assigned means; the target itself need not
    be assigned and is ignored if it is.  An infeasible result (a > b)
    signals that the assigned means already violate the constraints.
    """
    S = tuple(S)
    regions = leaf_regions(tree, p)
    target = regions[target_leaf]
    a, b = -math.inf, math.inf
    for lab, reg in regions.items():
        if lab == target_leaf or lab not in mus:
            continue
        if is_above_neighbor(reg, target, S):
            b = min(b, mus[lab])
        if is_above_neighbor(target, reg, S):
            a = max(a, mus[lab])
    return Interval(a, b)


def split_region(region: Region, rule: SplitRule) -> tuple[Region, Region]:
    """Child boxes produced by splitting ``region`` with ``rule``."""
    lower_l, upper_l = list(region.lower), list(region.upper)
    lower_r, upper_r = list(region.lower), list(region.upper)
    upper_l[rule.var] = rule.cut
    lower_r[rule.var] = rule.cut
    return (
        Region(tuple(lower_l), tuple(upper_l)),
        Region(tuple(lower_r), tuple(upper_r)),
    )


def pair_constraint(
    tree: Tree,
    mus_same: dict[int, float],
    birth_leaf: int,
    rule: SplitRule,
    S: Iterable[int],
    p: int,
) -> tuple[Interval, Interval, bool]:
    """Constraints on the two child means a split of ``birth_leaf`` would create.

    Returns each child's interval against the existing leaves plus an
    ``ordered`` flag; when the split variable is constrained, the left
    child is the below side and mu_left <= mu_right applies on top of
    the intervals.
    """
    S = tuple(S)
    regions = leaf_regions(tree, p)
    left, right = split_region(regions[birth_leaf], rule)
    intervals = []
    for child in (left, right):
        a, b = -math.inf, math.inf
        for lab, reg in regions.items():
            if lab == birth_leaf or lab not in mus_same:
                continue
            if is_above_neighbor(reg, child, S):
                b = min(b, mus_same[lab])
            if is_above_neighbor(child, reg, S):
                a = max(a, mus_same[lab])
        intervals.append(Interval(a, b))
    return intervals[0], intervals[1], rule.var in S


def check_tree_monotone(
    tree: Tree, S: Iterable[int], p: int, mus: Optional[dict[int, float]] = None
) -> bool:
    """True iff every leaf mean lies inside its feasible interval."""
    S = tuple(S)
    if mus is None:
        mus = tree.leaves
    regions = leaf_regions(tree, p)
    labels = sorted(regions)
    for idx, a in enumerate(labels):
        for b in labels[idx + 1 :]:
            if is_above_neighbor(regions[a], regions[b], S) and mus[a] < mus[b]:
                return False
            if is_above_neighbor(regions[b], regions[a], S) and mus[b] < mus[a]:
                return False
    return True


def _lattice_values(cuts: np.ndarray, lo: float, hi: float, extra: int) -> np.ndarray:
    """Test abscissae covering every routing cell of one coordinate.

    Exact cut values represent approach-from-below (<= routes left);
    midpoints and the two outer points cover the open cells between cuts.
    """
    pts = [lo, hi]
    pts.extend(cuts)
    pts.extend((cuts[:-1] + cuts[1:]) / 2.0)
    if extra > 0:
        pts.extend(np.linspace(lo, hi, extra))
    return np.unique(np.asarray(pts, dtype=float))


def brute_force_monotone(
    tree: Tree,
    S: Iterable[int],
    cutpoints: Sequence[np.ndarray],
    grid_density: int = 0,
    mus: Optional[dict[int, float]] = None,
) -> bool:
    """Directly verify nondecrease of the step function on a dense lattice.

    Test-scale oracle: enumerates a full product grid whose per-coordinate
    values straddle every cutpoint, then checks that stepping to the next
    lattice value in any constrained coordinate never decreases the fit.
    """
    S = tuple(S)
    work = tree
    if mus is not None:
        work = Tree(dict(tree.splits), {lab: mus[lab] for lab in tree.leaves})
    p = len(cutpoints)
    axes = []
    for i in range(p):
        cuts = np.asarray(cutpoints[i], dtype=float)
        if cuts.size == 0:
            axes.append(np.array([0.0]))
            continue
        axes.append(_lattice_values(cuts, cuts[0] - 1.0, cuts[-1] + 1.0, grid_density))
    mesh = np.meshgrid(*axes, indexing="ij")
    values = np.empty(mesh[0].shape)
    flat = np.stack([m.ravel() for m in mesh], axis=1)
    for k, x in enumerate(flat):
        values.ravel()[k] = evaluate_tree(work, x, cutpoints)
    for i in S:
        if np.any(np.diff(values, axis=i) < 0):
            return False
    return True
