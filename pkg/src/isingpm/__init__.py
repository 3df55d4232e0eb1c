"""Bayesian inference for binary pairwise interaction models whose partition
function is intractable, using only the tractable independence model for all
Monte Carlo sampling: an exact pseudo-marginal sampler built on an unbiased
randomized-series estimator of negative partition-function powers, a cheap
noisy sampler, and an exchange-algorithm baseline."""

__version__ = "0.1.0"

from .diagnostics import (
    DiagnosticsReport,
    autocorrelation,
    build_report,
    effective_sample_size,
    recovery_mse,
    sign_agreement,
)
from .estimators import (
    EstimatorConfig,
    RouletteEstimate,
    check_contraction,
    grad_log_partition_estimate,
    inverse_power_estimate,
    partition_ratio_estimate,
    ratio_variance_exact,
    roulette_estimate,
    truncation_variance_bounds,
    tune_scale,
)
from .harness import (
    ExperimentConfig,
    generate_true_theta,
    load_binary_csv,
    run_experiment,
    simulate_dataset,
)
from .ising import (
    BinaryDataset,
    IsingParams,
    SignedLogValue,
    conditional_logit,
    gibbs_sweep,
    independence_log_partition,
    log_partition_bruteforce,
    log_potential,
    log_potential_ratio,
    sample_independence,
    sufficient_stats,
)
from .priors import FlatPrior, LaplacePrior, RateSearchSettings, select_lambda
from .samplers import (
    ChainOutput,
    ChainState,
    ProposalSpec,
    exact_mh_step,
    exchange_step,
    noisy_step,
    pm_step,
    propose,
    run_chain,
    sign_weighted_mean,
)
