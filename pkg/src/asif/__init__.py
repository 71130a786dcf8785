"""Randomization-based as-if analysis of experiments.

Designs are discrete distributions over assignment vectors; design maps
send each observed assignment to the design used for analysis; the oracle
builds exact intervals from the error distribution and measures marginal
and conditional coverage; betting audits quantify relevance; matching and
fuzzy intervals cover the post-matching and stochastic-map analyses.
"""

from .designs import (
    Design,
    bernoulli_propensity,
    bernoulli_truncated,
    block_randomized,
    completely_randomized,
    condition,
    enumerate_support,
    explicit_design,
    factorial_joint,
    factorial_marginal,
    same_distribution,
)
from .design_maps import (
    ConditionalityCheck,
    DesignMap,
    Statistic,
    balance_ball_map,
    balance_bins_statistic,
    balance_partition_map,
    block_counts_statistic,
    cell_counts_statistic,
    conditional_map,
    constant_map,
    is_conditional,
    n_treated_statistic,
    partition_from_statistic,
    stochastic_window_map,
    window_map,
)
from .errors import (
    AsifError,
    ConfigError,
    DegenerateDesignError,
    DimensionError,
    EnumerationTooLargeError,
    ParameterError,
    UndefinedEstimatorError,
)
from .estimators import (
    Estimator,
    balance,
    diff_in_means,
    factorial_main_effect,
    post_stratified,
)
from .fuzzy import FuzzyInterval, fuzzy_interval
from .matching import (
    Matching,
    as_if_paired_map,
    greedy_match,
    matched_set_map,
    matched_set_statistic,
    pairmap_conditionality_check,
    valid_matching_design,
    within_pair_permutations,
)
from .oracle import (
    CoverageReport,
    OracleInterval,
    SamplingDistribution,
    coverage,
    coverage_profile,
    oracle_interval,
    oracle_quantiles,
    sampling_distribution,
    variance_decomposition_check,
)
from .population import (
    Assignment,
    FactorialAssignment,
    Population,
    ate,
    load_population_csv,
    normal_population,
    observe,
)
from .relevance import (
    AnalyticBernoulliModel,
    BettingStrategy,
    adversarial_strategy,
    analytic_beta_curve,
    expected_return,
    relevant_set_check,
)

__version__ = "0.1.0"
