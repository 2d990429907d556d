"""probnas: probabilistic neural architecture search on a numpy core.

Typical use::

    from probnas import load_space, TabularOracle, SearchConfig, run_search
    space = load_space("bench-mbconv")
    result = run_search(SearchConfig(epochs=200), space, TabularOracle(space, seed=0))
"""

__version__ = "0.1.0"

from .cost import CostModel, CostReport, arch_flops, hinge_cost, total_flops
from .dist import (ArchDistribution, entropy, factorized_to_joint, grad_neg_log_prob, init_uniform,
                   joint_to_factorized, log_prob, sample)
from .evaluators import TabularOracle, ToySupernet, make_evaluator
from .sampler import SamplingPolicy, draw_batch, sample_count
from .search import Search, SearchConfig, SearchError, SearchTrace, compare_schedules, run_search
from .space import (Architecture, SearchSpace, SpaceError, load_space, most_probable_architecture,
                    parse_space, space_size, validate_architecture)
from .update import AdamState, adam_step, alpha_gradient, importance_weights

__all__ = [
    "AdamState", "ArchDistribution", "Architecture", "CostModel", "CostReport", "SamplingPolicy",
    "Search", "SearchConfig", "SearchError", "SearchSpace", "SearchTrace", "SpaceError",
    "TabularOracle", "ToySupernet", "adam_step", "alpha_gradient", "arch_flops", "compare_schedules",
    "draw_batch", "entropy", "factorized_to_joint", "grad_neg_log_prob", "hinge_cost",
    "importance_weights", "init_uniform", "joint_to_factorized", "load_space", "log_prob",
    "make_evaluator", "most_probable_architecture", "parse_space", "run_search", "sample",
    "sample_count", "space_size", "total_flops", "validate_architecture",
]
