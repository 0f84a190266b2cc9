"""Sum-of-trees regression (BART) with optional monotonicity constraints (mBART).

The package fits y = f(x) + eps by backfitting MCMC over an ensemble of
binary regression trees.  When a constraint set S of predictors is given,
every sampled tree is kept monotone nondecreasing in those predictors, so
the fitted function and all posterior summaries are monotone as well.
"""

from .errors import DataError, InvariantError
from .tree import SplitRule, Tree, Forest, Region
from .tree import (
    evaluate_tree,
    evaluate_forest,
    leaf_region,
    leaf_regions,
    assign_rows,
    birth_eligible_leaves,
    death_eligible_nodes,
)
from .constraints import (
    Interval,
    is_separated,
    is_above_neighbor,
    is_below_neighbor,
    feasible_interval,
    pair_constraint,
    check_tree_monotone,
    brute_force_monotone,
)
from .priors import (
    CONSTRAINED_VARIANCE_INFLATION,
    HyperParams,
    default_hyperparams,
    split_prob,
    sample_tree_skeleton,
    calibrate_sigma_prior,
    calibrate_mu_prior,
    mu_prior,
    log_tree_prior_ratio,
)
from .marginals import (
    LeafStats,
    conjugate_posterior,
    leaf_log_marginal_constrained,
    leaf_log_marginal_grid,
    pair_log_marginal_grid,
    draw_mu_pair,
    draw_truncated_normal,
)
from .sampler import ChainState, run_chain, draw_sigma
from .inference import DrawSet, EffectCurve, predict, conditional_effects, rmse, sigma_summary
from .data_io import (
    Dataset,
    load_csv,
    prepare_arrays,
    build_cutpoints,
    persist_draws,
    load_draws,
)

__all__ = [name for name in dir() if not name.startswith("_")]
