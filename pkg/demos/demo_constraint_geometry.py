"""Walk through the region calculus that keeps a tree monotone.

Builds a six-leaf tree over two predictors, prints which leaf regions are
separated, which adjoin from above or below, and what range each leaf mean
may occupy given the others.
"""

import numpy as np

from mbart import (
    SplitRule,
    Tree,
    check_tree_monotone,
    brute_force_monotone,
    feasible_interval,
    is_above_neighbor,
    is_separated,
    leaf_regions,
)

cuts = [np.array([0.5]), np.array([0.45, 0.5, 0.8, 0.9])]
tree = Tree.root()
tree.birth(1, SplitRule(0, 0), 0.0, 0.0)   # x1 at .5
tree.birth(2, SplitRule(1, 0), 0.0, 0.0)   # x2 at .45
tree.birth(5, SplitRule(1, 3), 0.0, 0.0)   # x2 at .9
tree.birth(3, SplitRule(1, 2), 0.0, 0.0)   # x2 at .8
tree.birth(6, SplitRule(1, 1), 0.0, 0.0)   # x2 at .5

S = (0, 1)
regions = leaf_regions(tree, 2)
labels = sorted(regions)
print("leaves:", labels)

print("\npairwise relations (separated / above):")
for a in labels:
    for b in labels:
        if a == b:
            continue
        if is_separated(regions[a], regions[b]) and a < b:
            print(f"  {a} and {b} are separated")
        if is_above_neighbor(regions[a], regions[b], S):
            print(f"  {a} adjoins {b} from above")

mus = {4: -1.0, 10: -0.4, 12: -0.1, 11: 0.2, 13: 0.3, 7: 1.0}
tree.leaves.update(mus)
print("\nleaf means:", mus)
print("tree monotone (neighbor conditions):", check_tree_monotone(tree, S, 2))
print("tree monotone (dense lattice check):", brute_force_monotone(tree, S, cuts))

tree.leaves[12] = 0.5  # now exceeds its above-neighbor 13
print("\nafter raising leaf 12 above leaf 13:")
print("tree monotone (neighbor conditions):", check_tree_monotone(tree, S, 2))
print("tree monotone (dense lattice check):", brute_force_monotone(tree, S, cuts))
tree.leaves[12] = mus[12]

print("\nfeasible range of each leaf mean given the others:")
for lab in labels:
    iv = feasible_interval(tree, tree.leaves, lab, S, 2)
    print(f"  leaf {lab}: mu = {tree.leaves[lab]:+.2f} allowed [{iv.a:+.2f}, {iv.b:+.2f}]")
