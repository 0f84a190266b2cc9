"""Binary regression trees over a per-predictor cutpoint grid.

Nodes use the power-of-two labeling: the root is 1 and node j has children
2j and 2j+1.  Interior nodes carry a (var, cut) rule where ``cut`` indexes
the predictor's cutpoint grid; rows with x[var] <= cutpoint go left.  Leaf
regions are tracked in cut-index space so boundary coincidence tests are
exact integer comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import InvariantError


class SplitRule(NamedTuple):
    var: int
    cut: int


def depth_of(label: int) -> int:
    return label.bit_length() - 1


def parent_of(label: int) -> int:
    return label >> 1


class Tree:
    """Sparse label->node map; interior nodes in ``splits``, leaf means in ``leaves``."""

    __slots__ = ("splits", "leaves")

    def __init__(self, splits: Optional[dict] = None, leaves: Optional[dict] = None):
        self.splits: dict[int, SplitRule] = {} if splits is None else splits
        self.leaves: dict[int, float] = {1: 0.0} if leaves is None else leaves

    @classmethod
    def root(cls, mu: float = 0.0) -> "Tree":
        return cls(leaves={1: float(mu)})

    def copy(self) -> "Tree":
        return Tree(dict(self.splits), dict(self.leaves))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Tree)
            and self.splits == other.splits
            and self.leaves == other.leaves
        )

    def n_leaves(self) -> int:
        return len(self.leaves)

    def leaf_labels(self) -> list[int]:
        return sorted(self.leaves)

    def leaf_means(self) -> np.ndarray:
        """Leaf means in sorted-label order (the tree's M vector)."""
        return np.array([self.leaves[lab] for lab in self.leaf_labels()])

    def max_depth(self) -> int:
        return max(depth_of(lab) for lab in self.leaves)

    def birth(self, leaf: int, rule: SplitRule, mu_left: float, mu_right: float) -> None:
        """Split ``leaf`` in place, creating leaf children 2*leaf and 2*leaf+1."""
        if leaf not in self.leaves:
            raise InvariantError(f"birth target {leaf} is not a leaf")
        del self.leaves[leaf]
        self.splits[leaf] = rule
        self.leaves[2 * leaf] = float(mu_left)
        self.leaves[2 * leaf + 1] = float(mu_right)

    def death(self, node: int, mu: float) -> SplitRule:
        """Collapse an interior node whose children are both leaves; returns its rule."""
        left, right = 2 * node, 2 * node + 1
        if node not in self.splits or left not in self.leaves or right not in self.leaves:
            raise InvariantError(f"death target {node} has non-leaf children")
        rule = self.splits.pop(node)
        del self.leaves[left]
        del self.leaves[right]
        self.leaves[node] = float(mu)
        return rule


@dataclass(frozen=True)
class Region:
    """Axis-aligned box in cut-index space; ``None`` bounds are unbounded.

    lower[i] = k means x_i > cutpoints[i][k]; upper[i] = k means
    x_i <= cutpoints[i][k], matching the <=-goes-left routing rule.
    """

    lower: tuple
    upper: tuple

    @classmethod
    def full(cls, p: int) -> "Region":
        return cls((None,) * p, (None,) * p)

    @property
    def p(self) -> int:
        return len(self.lower)

    def contains(self, x: Sequence[float], cutpoints: Sequence[np.ndarray]) -> bool:
        for i in range(len(self.lower)):
            lo, hi = self.lower[i], self.upper[i]
            if lo is not None and not x[i] > cutpoints[i][lo]:
                return False
            if hi is not None and not x[i] <= cutpoints[i][hi]:
                return False
        return True


@dataclass
class Forest:
    """A sum-of-trees function: shared cutpoint grids plus m trees."""

    trees: list[Tree]
    cutpoints: list[np.ndarray]

    def copy(self) -> "Forest":
        return Forest([t.copy() for t in self.trees], self.cutpoints)

    @property
    def m(self) -> int:
        return len(self.trees)


def evaluate_tree(tree: Tree, x: Sequence[float], cutpoints: Sequence[np.ndarray]) -> float:
    """Route x to its leaf and return that leaf's mean."""
    if len(x) != len(cutpoints):
        raise ValueError(f"x has {len(x)} coordinates, expected {len(cutpoints)}")
    label = 1
    while label not in tree.leaves:
        rule = tree.splits[label]
        if x[rule.var] <= cutpoints[rule.var][rule.cut]:
            label = 2 * label
        else:
            label = 2 * label + 1
    return tree.leaves[label]


def evaluate_forest(forest: Forest, x: Sequence[float]) -> float:
    return sum(evaluate_tree(t, x, forest.cutpoints) for t in forest.trees)


def leaf_region(tree: Tree, leaf_label: int, p: int) -> Region:
    """Box of the leaf, read off the ancestor rules; tightest bound wins."""
    if leaf_label not in tree.leaves:
        raise InvariantError(f"{leaf_label} is not a leaf of the tree")
    lower: list = [None] * p
    upper: list = [None] * p
    label = leaf_label
    while label > 1:
        par = label >> 1
        rule = tree.splits[par]
        if label & 1:  # right child: x > cut
            if lower[rule.var] is None or rule.cut > lower[rule.var]:
                lower[rule.var] = rule.cut
        else:  # left child: x <= cut
            if upper[rule.var] is None or rule.cut < upper[rule.var]:
                upper[rule.var] = rule.cut
        label = par
    return Region(tuple(lower), tuple(upper))


def leaf_regions(tree: Tree, p: int) -> dict[int, Region]:
    return {lab: leaf_region(tree, lab, p) for lab in tree.leaves}


def assign_rows(tree: Tree, X: np.ndarray, cutpoints: Sequence[np.ndarray]) -> dict[int, np.ndarray]:
    """Partition row indices of X over the tree's leaves (vectorized descent)."""
    n = X.shape[0]
    out: dict[int, np.ndarray] = {}
    stack = [(1, np.arange(n))]
    while stack:
        label, rows = stack.pop()
        if label in tree.leaves:
            out[label] = rows
            continue
        rule = tree.splits[label]
        go_left = X[rows, rule.var] <= cutpoints[rule.var][rule.cut]
        stack.append((2 * label, rows[go_left]))
        stack.append((2 * label + 1, rows[~go_left]))
    return out


def evaluate_tree_rows(tree: Tree, X: np.ndarray, cutpoints: Sequence[np.ndarray]) -> np.ndarray:
    """Fitted values of the tree at every row of X."""
    fit = np.empty(X.shape[0])
    for lab, rows in assign_rows(tree, X, cutpoints).items():
        fit[rows] = tree.leaves[lab]
    return fit


def evaluate_forest_rows(forest: Forest, X: np.ndarray) -> np.ndarray:
    total = np.zeros(X.shape[0])
    for t in forest.trees:
        total += evaluate_tree_rows(t, X, forest.cutpoints)
    return total


def admissible_index_range(region: Region, var: int, n_cuts: int) -> tuple[int, int]:
    """Half-open [lo, hi) range of cut indices that split the region non-trivially."""
    lo = -1 if region.lower[var] is None else region.lower[var]
    hi = n_cuts if region.upper[var] is None else region.upper[var]
    return lo + 1, hi


def split_ranges_for_region(
    region: Region,
    rows: np.ndarray,
    X: np.ndarray,
    cutpoints: Sequence[np.ndarray],
    min_leaf: int,
) -> dict[int, tuple[int, int]]:
    """Admissible cut-index ranges for a box holding the given rows.

    A cut c is admissible iff min_leaf <= #(x <= c) <= n - min_leaf, i.e.
    c lies in [v(min_leaf), v(n-min_leaf+1)) of the rows' order statistics,
    so the admissible cuts form a contiguous index range per variable.
    """
    n_rows = rows.size
    out: dict[int, tuple[int, int]] = {}
    if n_rows < 2 * min_leaf:
        return out
    kth = (min_leaf - 1, n_rows - min_leaf)
    for var, cuts in enumerate(cutpoints):
        lo, hi = admissible_index_range(region, var, len(cuts))
        if lo >= hi:
            continue
        vals = np.partition(X[rows, var], kth)
        k0 = max(lo, int(cuts.searchsorted(vals[kth[0]], side="left")))
        k1 = min(hi, int(cuts.searchsorted(vals[kth[1]], side="left")))
        if k0 < k1:
            out[var] = (k0, k1)
    return out


def admissible_split_ranges(
    tree: Tree,
    leaf: int,
    rows: np.ndarray,
    X: np.ndarray,
    cutpoints: Sequence[np.ndarray],
    min_leaf: int,
) -> dict[int, tuple[int, int]]:
    """Per variable, the half-open cut-index range giving both children at
    least min_leaf rows; variables with no admissible cut are absent."""
    region = leaf_region(tree, leaf, len(cutpoints))
    return split_ranges_for_region(region, rows, X, cutpoints, min_leaf)


def region_has_split(
    region: Region,
    rows: np.ndarray,
    X: np.ndarray,
    cutpoints: Sequence[np.ndarray],
    min_leaf: int,
) -> bool:
    """Existence version of split_ranges_for_region with early exit."""
    n_rows = rows.size
    if n_rows < 2 * min_leaf:
        return False
    kth = (min_leaf - 1, n_rows - min_leaf)
    for var, cuts in enumerate(cutpoints):
        lo, hi = admissible_index_range(region, var, len(cuts))
        if lo >= hi:
            continue
        vals = np.partition(X[rows, var], kth)
        k0 = max(lo, int(cuts.searchsorted(vals[kth[0]], side="left")))
        k1 = min(hi, int(cuts.searchsorted(vals[kth[1]], side="left")))
        if k0 < k1:
            return True
    return False


def admissible_splits(
    tree: Tree,
    leaf: int,
    rows: np.ndarray,
    X: np.ndarray,
    cutpoints: Sequence[np.ndarray],
    min_leaf: int,
) -> dict[int, np.ndarray]:
    """Per variable, the cut indices giving both children at least min_leaf rows.

    Only variables with at least one admissible cut appear in the result.
    """
    ranges = admissible_split_ranges(tree, leaf, rows, X, cutpoints, min_leaf)
    return {var: np.arange(k0, k1) for var, (k0, k1) in ranges.items()}


def birth_eligible_leaves(
    tree: Tree,
    X: np.ndarray,
    cutpoints: Sequence[np.ndarray],
    min_leaf: int,
    max_depth: Optional[int] = None,
    assign: Optional[dict[int, np.ndarray]] = None,
) -> list[int]:
    """Leaves where some (var, cut) yields two children each holding >= min_leaf rows."""
    if assign is None:
        assign = assign_rows(tree, X, cutpoints)
    eligible = []
    for leaf in tree.leaf_labels():
        if max_depth is not None and depth_of(leaf) >= max_depth:
            continue
        if admissible_splits(tree, leaf, assign[leaf], X, cutpoints, min_leaf):
            eligible.append(leaf)
    return eligible


def death_eligible_nodes(tree: Tree) -> list[int]:
    """Interior nodes whose two children are both leaves."""
    return sorted(
        lab
        for lab in tree.splits
        if 2 * lab in tree.leaves and 2 * lab + 1 in tree.leaves
    )


def validate_tree(tree: Tree, n_cutpoints: Sequence[int]) -> None:
    """Raise InvariantError on any structural defect."""
    labels = set(tree.splits) | set(tree.leaves)
    if set(tree.splits) & set(tree.leaves):
        raise InvariantError("a label is both interior and leaf")
    if 1 not in labels:
        raise InvariantError("root label 1 missing")
    p = len(n_cutpoints)
    for lab, rule in tree.splits.items():
        if 2 * lab not in labels or 2 * lab + 1 not in labels:
            raise InvariantError(f"interior node {lab} lacks a child")
        if not 0 <= rule.var < p:
            raise InvariantError(f"node {lab} splits unknown variable {rule.var}")
        if not 0 <= rule.cut < n_cutpoints[rule.var]:
            raise InvariantError(f"node {lab} cut index {rule.cut} out of range")
    for lab in tree.leaves:
        if 2 * lab in labels or 2 * lab + 1 in labels:
            raise InvariantError(f"leaf {lab} has children")
        if lab > 1 and parent_of(lab) not in tree.splits:
            raise InvariantError(f"node {lab} is orphaned")
    # every rule must be reachable: its admissible range under ancestors nonempty
    for lab, rule in tree.splits.items():
        region = _interior_region(tree, lab, p)
        lo, hi = admissible_index_range(region, rule.var, n_cutpoints[rule.var])
        if not lo <= rule.cut < hi:
            raise InvariantError(f"rule at node {lab} is unreachable given its ancestors")


def _interior_region(tree: Tree, label: int, p: int) -> Region:
    lower: list = [None] * p
    upper: list = [None] * p
    lab = label
    while lab > 1:
        par = lab >> 1
        rule = tree.splits[par]
        if lab & 1:
            if lower[rule.var] is None or rule.cut > lower[rule.var]:
                lower[rule.var] = rule.cut
        else:
            if upper[rule.var] is None or rule.cut < upper[rule.var]:
                upper[rule.var] = rule.cut
        lab = par
    return Region(tuple(lower), tuple(upper))


def serialize_tree(tree: Tree) -> list[str]:
    """One line per node: "label var cut" for interior, "label leaf mu" for leaves."""
    lines = []
    for lab in sorted(set(tree.splits) | set(tree.leaves)):
        if lab in tree.splits:
            rule = tree.splits[lab]
            lines.append(f"{lab} {rule.var} {rule.cut}")
        else:
            lines.append(f"{lab} leaf {float(tree.leaves[lab])!r}")
    return lines


def parse_tree(lines: Iterable[str]) -> Tree:
    splits: dict[int, SplitRule] = {}
    leaves: dict[int, float] = {}
    for line in lines:
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"malformed tree line: {line!r}")
        label = int(parts[0])
        if parts[1] == "leaf":
            leaves[label] = float(parts[2])
        else:
            splits[label] = SplitRule(int(parts[1]), int(parts[2]))
    return Tree(splits, leaves)
