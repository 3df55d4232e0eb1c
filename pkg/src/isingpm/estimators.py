"""Unbiased Monte Carlo estimators built on independence-model importance sampling.

The chain of estimators, bottom to top:

* ``partition_ratio_estimate`` — unbiased estimate of the ratio
  mu = z(theta) / z(independence model) from N importance draws.  This is the
  only stochastic primitive; everything below it samples exclusively from the
  independence model (batched Bernoulli draws, no inner Markov chains).
* ``roulette_estimate`` — randomized truncation of the negative-binomial series
  for (scale * mu)^(-n): draw a geometric truncation level R, reweight each kept
  term by the inverse survival probability, and plug one fresh ratio estimate
  into each series factor.  Unbiased for (scale * mu)^(-n) whenever the series
  contracts (E|1 - scale * ratio-estimate| < 1), but can come out negative, so
  the result is carried as a SignedLogValue.
* ``inverse_power_estimate`` — rescales the roulette output by
  [scale / z(independence)]^n to give an unbiased estimate of z(theta)^(-n),
  the quantity a pseudo-marginal chain needs.

``tune_scale`` picks the series scale from a pilot run so the expansion is
centered: scale * mu is close to the configured alpha in (0, 2).
``check_contraction`` estimates the contraction factor E|1 - scale * estimate|
so callers can detect a badly centered series before trusting it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .ising import (
    ENUMERATION_CAP,
    IsingParams,
    SignedLogValue,
    draw_independence_matrix,
    independence_log_partition,
    log_partition_bruteforce,
    log_potential_ratio_batch,
    sigmoid,
)

# Contraction estimates at or above this are treated as a tuning failure.
CONTRACTION_FAILURE = 0.95


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs for the ratio and roulette estimators.

    n_samples
        Importance draws per ratio-estimate replicate (N).
    pilot_replicates
        Replicates used when tuning the series scale and when estimating the
        contraction factor (M).
    alpha
        Target for scale * mu, in (0, 2).  1.0 centers the series exactly;
        smaller values buy a convergence buffer against pilot noise.
    geom_p
        Success probability of the geometric truncation variable, supported
        on {0, 1, 2, ...}; expected number of series terms is 1/geom_p - 1.
    enumeration_cap
        Largest p for which brute-force oracles are allowed.
    """

    n_samples: int = 5000
    pilot_replicates: int = 20
    alpha: float = 1.0
    geom_p: float = 0.1
    enumeration_cap: int = ENUMERATION_CAP

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.pilot_replicates < 1:
            raise ValueError("pilot_replicates must be >= 1")
        if not 0.0 < self.alpha < 2.0:
            raise ValueError("alpha must lie in (0, 2)")
        if not 0.0 < self.geom_p < 1.0:
            raise ValueError("geom_p must lie in (0, 1)")


@dataclass(frozen=True)
class RouletteEstimate:
    """One realized randomized-truncation estimate.

    value
        The signed estimate of (scale * mu)^(-n).
    truncation
        Realized truncation level R (number of series factors used).
    ratio_estimates
        The R ratio-estimate replicates consumed by the series factors.
    scale
        The series scale the estimate was built with.
    """

    value: SignedLogValue
    truncation: int
    ratio_estimates: np.ndarray
    scale: float

    def __post_init__(self):
        if len(self.ratio_estimates) != self.truncation:
            raise ValueError("need exactly one ratio estimate per series factor")
        if not self.scale > 0:
            raise ValueError("scale must be positive")


def _interaction_log_ratios(bits: np.ndarray, params: IsingParams) -> np.ndarray:
    """Row-wise 2 * sum_{j<k} theta[j,k] x_j x_k from a boolean draw matrix.

    Sparse interaction matrices go through a per-pair boolean pipeline (cost
    scales with the nonzero pairs, not p^2); dense ones fall back to the
    matrix product.
    """
    off = params.offdiagonal()
    iu, ju = np.nonzero(np.triu(off, k=1))
    if iu.size == 0:
        return np.zeros(bits.shape[0])
    if iu.size <= 4 * params.p:
        out = np.zeros(bits.shape[0])
        for j, k in zip(iu, ju):
            out += (2.0 * off[j, k]) * (bits[:, j] & bits[:, k])
        return out
    return log_potential_ratio_batch(bits.astype(float), off)


def log_ratio_estimates(params: IsingParams, n_draws: int, n_replicates: int,
                        rng: np.random.Generator) -> np.ndarray:
    """log of ``n_replicates`` independent ratio estimates, each from ``n_draws``
    importance samples.  All draws happen in one batch; each replicate is
    reduced by a max-shifted log-sum-exp.
    """
    probs = sigmoid(np.diagonal(params.theta))
    bits = rng.random((n_replicates * n_draws, params.p)) < probs
    ratios = _interaction_log_ratios(bits, params).reshape(n_replicates, n_draws)
    m = ratios.max(axis=1)
    return m + np.log(np.mean(np.exp(ratios - m[:, None]), axis=1))


def partition_ratio_estimate(params: IsingParams, n_draws: int,
                             rng: np.random.Generator) -> float:
    """Unbiased importance-sampling estimate of mu = z(theta) / z(independence).

    Averages potential ratios over ``n_draws`` independence-model draws.
    Strictly positive; the average is accumulated in log scale.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    return float(np.exp(log_ratio_estimates(params, n_draws, 1, rng)[0]))


def tune_scale(params: IsingParams, cfg: EstimatorConfig,
               rng: np.random.Generator) -> float:
    """Pilot-tune the series scale: alpha / mean of M independent ratio estimates."""
    logs = log_ratio_estimates(params, cfg.n_samples, cfg.pilot_replicates, rng)
    m = logs.max()
    log_mean = m + np.log(np.mean(np.exp(logs - m)))
    return float(cfg.alpha / np.exp(log_mean))


def check_contraction(params: IsingParams, scale: float, cfg: EstimatorConfig,
                      rng: np.random.Generator) -> float:
    """Monte Carlo estimate of the series contraction factor
    E|1 - scale * ratio-estimate| from M fresh replicates.

    Values approaching 1 signal a divergent or heavy-tailed series.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    logs = log_ratio_estimates(params, cfg.n_samples, cfg.pilot_replicates, rng)
    return float(np.mean(np.abs(1.0 - np.exp(np.log(scale) + logs))))


def tune_scale_checked(params: IsingParams, cfg: EstimatorConfig,
                       rng: np.random.Generator) -> tuple[float, str | None]:
    """Tune the scale, then verify the contraction estimate.

    If the estimate is >= CONTRACTION_FAILURE the scale is retuned once with
    alpha halved and a warning string is returned alongside it; sampling
    proceeds either way (the roulette estimator stays unbiased, only its
    variance suffers).
    """
    scale = tune_scale(params, cfg, rng)
    contraction = check_contraction(params, scale, cfg, rng)
    if contraction < CONTRACTION_FAILURE:
        return scale, None
    half = replace(cfg, alpha=cfg.alpha / 2.0)
    scale = tune_scale(params, half, rng)
    warning = (
        f"contraction estimate {contraction:.3f} >= {CONTRACTION_FAILURE}; "
        f"retuned scale with alpha {half.alpha:.3g}"
    )
    return scale, warning


def _log_series_coefficient(n_obs: int, k: int) -> float:
    """log of binom(n_obs + k - 1, k), the negative-binomial series coefficient."""
    return math.lgamma(n_obs + k) - math.lgamma(k + 1) - math.lgamma(n_obs)


def roulette_estimate(params: IsingParams, scale: float, n_obs: int,
                      cfg: EstimatorConfig, rng: np.random.Generator) -> RouletteEstimate:
    """Randomized-truncation estimate of (scale * mu)^(-n_obs).

    Draws R ~ Geometric(geom_p) on {0, 1, ...}, then R independent ratio
    estimates.  Term k of the series is

        binom(n_obs+k-1, k) / (1-geom_p)^k  *  prod_{j<=k} (1 - scale * est_j),

    for k = 0..R (the k = 0 product is empty, so term 0 is always 1).  The
    signed terms are rescaled by the largest magnitude and added with
    compensated summation before conversion to a SignedLogValue: the
    coefficients grow combinatorially while the products alternate in sign,
    so naive signed log-space addition would lose precision.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    if n_obs < 1:
        raise ValueError("n_obs must be >= 1")
    truncation = int(rng.geometric(cfg.geom_p)) - 1
    log_scale = np.log(scale)
    if truncation == 0:
        ratio_reps = np.empty(0)
        factors = np.empty(0)
    else:
        log_reps = log_ratio_estimates(params, cfg.n_samples, truncation, rng)
        ratio_reps = np.exp(log_reps)
        factors = 1.0 - np.exp(log_scale + log_reps)

    # log|term_k| and sign(term_k) for k = 0..R, built from cumulative factor
    # products; zero factors make every later term vanish.
    signs = np.ones(truncation + 1)
    log_terms = np.zeros(truncation + 1)
    if truncation > 0:
        with np.errstate(divide="ignore"):
            log_factors = np.log(np.abs(factors))
        signs[1:] = np.cumprod(np.sign(factors))
        k = np.arange(1, truncation + 1)
        log_coeff = np.array([_log_series_coefficient(n_obs, int(i)) for i in k])
        log_terms[1:] = log_coeff - k * np.log1p(-cfg.geom_p) + np.cumsum(log_factors)

    peak = float(np.max(log_terms))
    total = 0.0
    carry = 0.0
    for s, lt in zip(signs, log_terms):
        term = s * math.exp(lt - peak)
        y = term - carry
        t = total + y
        carry = (t - total) - y
        total = t

    if total == 0.0:
        value = SignedLogValue(0, -np.inf)
    else:
        value = SignedLogValue(1 if total > 0 else -1, peak + math.log(abs(total)))
    return RouletteEstimate(value=value, truncation=truncation,
                            ratio_estimates=ratio_reps, scale=scale)


def inverse_power_estimate(params: IsingParams, n_obs: int, cfg: EstimatorConfig,
                           rng: np.random.Generator) -> tuple[SignedLogValue, float]:
    """Unbiased signed estimate of z(theta)^(-n_obs), plus the scale used.

    Tunes the series scale from a pilot, runs the roulette estimator, and
    multiplies by [scale / z(independence)]^n_obs.
    """
    scale = tune_scale(params, cfg, rng)
    est = roulette_estimate(params, scale, n_obs, cfg, rng)
    log_factor = n_obs * (np.log(scale) - independence_log_partition(params))
    return est.value.scaled(log_factor), scale


def grad_log_partition_estimate(params: IsingParams, n_draws: int,
                                rng: np.random.Generator) -> np.ndarray:
    """Self-normalized importance estimate of the gradient of log z(theta)
    with respect to the free coordinates, returned as a symmetric matrix.

    One batch of independence draws is shared between numerator and
    denominator, which cancels the independence normalizer exactly and keeps
    the ratio's variance down.  Consistent in n_draws, not unbiased.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    rows = draw_independence_matrix(params, n_draws, rng)
    ratios = log_potential_ratio_batch(rows, params.offdiagonal())
    weights = np.exp(ratios - ratios.max())
    denom = weights.sum()
    # Weighted sufficient statistics: off-diagonals 2 * sum w x_j x_k, diagonal sum w x_j.
    weighted = rows * weights[:, None]
    num = 2.0 * (weighted.T @ rows)
    np.fill_diagonal(num, weighted.sum(axis=0))
    return num / denom


def grad_log_partition_exact(params: IsingParams, max_p: int = 14) -> np.ndarray:
    """Enumeration oracle for the gradient of log z: the expectation of the
    sufficient statistics under the model.  Materializes the full
    configuration table, so p is capped at 14."""
    from .ising import enumerate_configurations, log_potential_batch

    configs = enumerate_configurations(params.p) if params.p <= max_p else None
    if configs is None:
        raise ValueError(f"exact gradient refused: p={params.p} exceeds cap {max_p}")
    vals = log_potential_batch(configs, params)
    weights = np.exp(vals - vals.max())
    weighted = configs * weights[:, None]
    num = 2.0 * (weighted.T @ configs)
    np.fill_diagonal(num, weighted.sum(axis=0))
    return num / weights.sum()


def ratio_variance_exact(params_from: IsingParams, params_to: IsingParams,
                         max_p: int = ENUMERATION_CAP) -> float:
    """Closed-form variance of the single-draw potential ratio
    U = potential(Y; to) / potential(Y; from) with Y drawn from the 'from' model:

        var(U) = z(2*to - from) / z(from)  -  z(to)^2 / z(from)^2.

    Uses three brute-force partition evaluations, so p must be at or below the
    enumeration cap.
    """
    if params_from.p != params_to.p:
        raise ValueError("dimension mismatch between the two parameter matrices")
    mixed = IsingParams(2.0 * params_to.theta - params_from.theta)
    lz_from = log_partition_bruteforce(params_from, max_p)
    lz_to = log_partition_bruteforce(params_to, max_p)
    lz_mixed = log_partition_bruteforce(mixed, max_p)
    return float(np.exp(lz_mixed - lz_from) - np.exp(2.0 * (lz_to - lz_from)))


def truncation_variance_bounds(center_gap: float, spread: float,
                               stop_prob: float) -> tuple[float, float]:
    """Diagnostic upper bounds on the two variance components of the roulette
    estimator at truncation probability ``stop_prob``:

    * ``bound_between``: variance across truncation levels, valid when the
      series centering gap |1 - scale * mu| is below 1/(2e);
    * ``bound_within``: expected variance given the truncation level, valid
      when the root second moment of the series factor is below 1/(4e).

    Returns (bound_between, bound_within).  Raises when the applicability
    conditions fail, including stop_prob >= 1 - 4 e^2 spread^2.
    """
    e = math.e
    if not 0 <= center_gap < 1 / (2 * e):
        raise ValueError(f"bounds inapplicable: center gap {center_gap} not in [0, 1/(2e))")
    if not 0 <= spread < 1 / (4 * e):
        raise ValueError(f"bounds inapplicable: spread {spread} not in [0, 1/(4e))")
    if not 0 < stop_prob < 1 - 4 * spread**2 * e**2:
        raise ValueError(
            f"bounds inapplicable: stop probability {stop_prob} not below "
            f"{1 - 4 * spread**2 * e**2}"
        )
    between = (1.0 / (1.0 - 2 * e * center_gap) ** 2) * (
        4 * center_gap**2 * e**2 * stop_prob
        / (1.0 - stop_prob - 4 * center_gap**2 * e**2)
    )
    within = ((1.0 + 4 * e * spread) / (1.0 - 4 * e * spread)) * (
        (1.0 - stop_prob) / (1.0 - stop_prob - 4 * e**2 * spread**2)
    )
    return between, within


def oracle_partition_ratio(params: IsingParams, max_p: int = ENUMERATION_CAP) -> float:
    """Brute-force value of mu = z(theta)/z(independence); test and tuning oracle."""
    return float(np.exp(log_partition_bruteforce(params, max_p)
                        - independence_log_partition(params)))


__all__ = [
    "EstimatorConfig",
    "RouletteEstimate",
    "CONTRACTION_FAILURE",
    "partition_ratio_estimate",
    "log_ratio_estimates",
    "tune_scale",
    "check_contraction",
    "tune_scale_checked",
    "roulette_estimate",
    "inverse_power_estimate",
    "grad_log_partition_estimate",
    "ratio_variance_exact",
    "truncation_variance_bounds",
    "oracle_partition_ratio",
]
