import numpy as np
import pytest

from mbart.tree import Region, SplitRule, Tree, admissible_index_range


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_tree(
    rng: np.random.Generator,
    n_cutpoints: list,
    p_split: float = 0.6,
    max_depth: int = 4,
    mu_sd: float = 1.0,
) -> Tree:
    """A structurally valid random tree: every rule admissible under its ancestors."""
    p = len(n_cutpoints)
    tree = Tree.root(0.0)

    def grow(label: int, lower: list, upper: list, depth: int) -> None:
        if depth >= max_depth or rng.random() >= p_split:
            tree.leaves[label] = float(rng.normal(0.0, mu_sd))
            return
        region = Region(tuple(lower), tuple(upper))
        options = []
        for var in range(p):
            lo, hi = admissible_index_range(region, var, n_cutpoints[var])
            options.extend((var, k) for k in range(lo, hi))
        if not options:
            tree.leaves[label] = float(rng.normal(0.0, mu_sd))
            return
        var, cut = options[rng.integers(len(options))]
        del tree.leaves[label]
        tree.splits[label] = SplitRule(var, cut)
        tree.leaves[2 * label] = 0.0
        tree.leaves[2 * label + 1] = 0.0
        low_l, up_l = list(lower), list(upper)
        up_l[var] = cut if upper[var] is None else min(upper[var], cut)
        low_r, up_r = list(lower), list(upper)
        low_r[var] = cut if lower[var] is None else max(lower[var], cut)
        grow(2 * label, low_l, up_l, depth + 1)
        grow(2 * label + 1, low_r, up_r, depth + 1)

    grow(1, [None] * p, [None] * p, 0)
    return tree


def random_cutpoints(rng: np.random.Generator, p: int, k_max: int = 6) -> list:
    return [np.sort(rng.uniform(0.0, 1.0, size=int(rng.integers(2, k_max + 1)))) for _ in range(p)]
