"""MCMC kernels for posterior sampling over the interaction matrix.

Four kernels share one state layout and one proposal mechanism:

* ``pm_step`` — pseudo-marginal Metropolis-Hastings.  The intractable
  z(theta)^(-n) in the posterior is replaced by the signed roulette estimate;
  acceptance uses the magnitude of the estimate and the sign is tracked per
  iteration so expectations can be recovered by sign reweighting.  The
  estimate is part of the augmented chain state: a rejected move keeps the
  stored estimate untouched, which is what makes the marginal chain exact.
* ``noisy_step`` — plug-in approximation of the log acceptance ratio using
  fresh ratio estimates on both sides every iteration, nothing cached.  Cheap,
  biased at finite sample size, with bias vanishing as the per-iteration
  sample count grows.
* ``exchange_step`` — auxiliary-variable baseline; auxiliary data are drawn by
  a finite inner Gibbs run started at the observed rows (the double-MH
  convention), so the kernel is approximate unless the conditionals factorize.
* ``exact_mh_step`` — textbook MH with a brute-force partition function;
  ground-truth oracle for desk-scale comparisons.

Proposals act on the p(p+1)/2 free coordinates (upper triangle plus diagonal)
and mirror the sampled triangle to keep parameter matrices symmetric.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .estimators import (
    EstimatorConfig,
    grad_log_partition_estimate,
    grad_log_partition_exact,
    log_ratio_estimates,
    roulette_estimate,
    tune_scale_checked,
)
from .ising import (
    BinaryDataset,
    IsingParams,
    SignedLogValue,
    gibbs_sweep_batch,
    independence_log_partition,
    log_partition_bruteforce,
    pack_upper,
    sufficient_stats_sum,
    triangle_inner,
    unpack_upper,
)

KERNELS = ("pm", "noisy", "exchange", "exact")


class EstimationError(RuntimeError):
    """Raised when an estimate is undefined (for example exact sign cancellation)."""


@dataclass(frozen=True)
class ProposalSpec:
    """Proposal configuration.

    kind
        "random_walk": independent Gaussian moves on every free coordinate,
        variance step_rw each.
        "langevin": mean drifted by step_langevin times an estimated posterior
        gradient, coordinate variance 2 * step_langevin (the usual
        discretized-diffusion scaling); the gradient of the log partition
        is estimated from grad_samples independence draws.
    diagonal_only
        Restrict moves (and the Langevin drift) to the diagonal coordinates;
        off-diagonals stay fixed.  Used by tractable-submodel checks.
    exact_gradient
        Replace the estimated log-partition gradient with the enumeration
        oracle (small p only); quantifies the effect of gradient noise.
    """

    kind: str = "random_walk"
    step_rw: float = 0.04
    step_langevin: float = 0.01
    grad_samples: int = 5000
    diagonal_only: bool = False
    exact_gradient: bool = False

    def __post_init__(self):
        if self.kind not in ("random_walk", "langevin"):
            raise ValueError(f"unknown proposal kind {self.kind!r}")
        if self.step_rw <= 0 or self.step_langevin <= 0:
            raise ValueError("step sizes must be positive")
        if self.grad_samples < 1:
            raise ValueError("grad_samples must be >= 1")


@dataclass(frozen=True)
class ChainState:
    """Current point of a chain plus everything the kernels cache.

    ``scale`` and ``roulette`` belong to the pseudo-marginal kernel and are
    updated only when a move is accepted; the other kernels ignore them.
    ``suff_stat_sum`` is the data-side sufficient statistic, computed once.
    """

    theta: IsingParams
    log_prior: float
    suff_stat_sum: np.ndarray
    scale: float = np.nan
    roulette: SignedLogValue | None = None


@dataclass(frozen=True)
class StepRecord:
    """What one kernel application reports back to the chain driver."""

    accepted: bool
    log_post_est: float
    warnings: tuple[str, ...] = ()


@dataclass
class ChainOutput:
    """Post-burn-in chain record.

    samples
        (kept, p*(p+1)/2) array of free coordinates, upper triangle row-major.
    signs
        Sign of the stored roulette estimate at each kept iteration (+1
        everywhere for non-pseudo-marginal kernels).
    accept_flags, log_post_trace
        Per-kept-iteration acceptance indicator and log-posterior estimate.
    """

    p: int
    samples: np.ndarray
    signs: np.ndarray
    accept_flags: np.ndarray
    log_post_trace: np.ndarray
    wall_time: float
    warnings: list[str]

    def __post_init__(self):
        kept = self.samples.shape[0]
        if not (len(self.signs) == len(self.accept_flags)
                == len(self.log_post_trace) == kept):
            raise ValueError("per-iteration records must all have equal length")

    def theta_at(self, i: int) -> IsingParams:
        return IsingParams(unpack_upper(self.samples[i], self.p))

    def posterior_mean(self) -> IsingParams:
        """Plain average of the kept samples (ignores signs)."""
        return IsingParams(unpack_upper(self.samples.mean(axis=0), self.p))


def _mirror_free(base: np.ndarray, delta_free: np.ndarray) -> np.ndarray:
    p = base.shape[0]
    return base + unpack_upper(delta_free, p)


def log_data_term(suff_stat_sum: np.ndarray, theta: IsingParams,
                  theta_prime: IsingParams) -> float:
    """Data part of the log MH ratio, computed by cancellation:
    sum over observations of the log-potential difference equals
    <suff_stat_sum, theta' - theta> over the free coordinates.
    """
    return triangle_inner(suff_stat_sum, theta_prime.theta - theta.theta)


def _posterior_grad_estimate(state: ChainState, spec: ProposalSpec,
                             data: BinaryDataset, prior,
                             rng: np.random.Generator) -> np.ndarray:
    if spec.exact_gradient:
        glz = grad_log_partition_exact(state.theta)
    else:
        glz = grad_log_partition_estimate(state.theta, spec.grad_samples, rng)
    grad = state.suff_stat_sum - data.n * glz + prior.grad_log_density(state.theta)
    if spec.diagonal_only:
        grad = np.diag(np.diagonal(grad))
    return grad


def _langevin_mean(theta: np.ndarray, grad: np.ndarray, gamma: float) -> np.ndarray:
    return theta + gamma * grad


def _gaussian_log_density_free(x: IsingParams, mean: np.ndarray, var: float,
                               diagonal_only: bool) -> float:
    """Log density of the free coordinates under an isotropic Gaussian, up to
    the additive constant shared by forward and reverse proposals."""
    diff = pack_upper(x.theta - mean)
    if diagonal_only:
        # Off-diagonal coordinates are not sampled; only diagonal terms count.
        diff = np.diagonal(x.theta - mean)
    return float(-np.sum(diff**2) / (2.0 * var))


def propose(state: ChainState, spec: ProposalSpec, data: BinaryDataset, prior,
            rng: np.random.Generator) -> tuple[IsingParams, float, float]:
    """Draw a proposal and return (theta', log q(theta'|theta), log q(theta|theta')).

    Random-walk proposals are symmetric so both log densities are returned as
    0.  Langevin proposals evaluate a full reversible-correction pair, with an
    independent fresh gradient estimate at the proposed point for the reverse
    density; both densities omit the same additive normalizing constant.
    """
    p = state.theta.p
    n_free = p * (p + 1) // 2
    if spec.kind == "random_walk":
        step = np.sqrt(spec.step_rw) * rng.standard_normal(n_free)
        if spec.diagonal_only:
            mask = np.zeros((p, p))
            np.fill_diagonal(mask, 1.0)
            step = step * pack_upper(mask)
        theta_prime = IsingParams(_mirror_free(state.theta.theta, step))
        return theta_prime, 0.0, 0.0

    gamma = spec.step_langevin
    var = 2.0 * gamma
    grad = _posterior_grad_estimate(state, spec, data, prior, rng)
    mean_fwd = _langevin_mean(state.theta.theta, grad, gamma)
    noise = np.sqrt(var) * rng.standard_normal(n_free)
    if spec.diagonal_only:
        mask = np.zeros((p, p))
        np.fill_diagonal(mask, 1.0)
        noise = noise * pack_upper(mask)
    theta_prime = IsingParams(_mirror_free(mean_fwd, noise))
    log_q_forward = _gaussian_log_density_free(theta_prime, mean_fwd, var,
                                               spec.diagonal_only)
    prime_state = replace(state, theta=theta_prime)
    grad_rev = _posterior_grad_estimate(prime_state, spec, data, prior, rng)
    mean_rev = _langevin_mean(theta_prime.theta, grad_rev, gamma)
    log_q_reverse = _gaussian_log_density_free(state.theta, mean_rev, var,
                                               spec.diagonal_only)
    return theta_prime, log_q_forward, log_q_reverse


def _accept(log_alpha: float, rng: np.random.Generator) -> bool:
    return np.log(rng.random()) < min(log_alpha, 0.0)


def pm_log_posterior_estimate(state: ChainState, n_obs: int) -> float:
    """The pseudo-marginal chain's own unnormalized log-posterior estimate:
    data term + prior + n * (log scale - log z(independence)) + log|estimate|.
    """
    return (triangle_inner(state.suff_stat_sum, state.theta.theta)
            + state.log_prior
            + n_obs * (np.log(state.scale)
                       - independence_log_partition(state.theta))
            + state.roulette.log_abs)


def init_chain_state(kernel: str, theta0: IsingParams, data: BinaryDataset,
                     cfg: EstimatorConfig, prior,
                     rng: np.random.Generator) -> tuple[ChainState, tuple[str, ...]]:
    """Build the initial state; for the pseudo-marginal kernel this tunes the
    series scale and draws the initial signed estimate."""
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")
    ssum = sufficient_stats_sum(data)
    state = ChainState(theta=theta0, log_prior=prior.log_density(theta0),
                       suff_stat_sum=ssum)
    warnings: tuple[str, ...] = ()
    if kernel == "pm":
        scale, warning = tune_scale_checked(theta0, cfg, rng)
        est = roulette_estimate(theta0, scale, data.n, cfg, rng)
        state = replace(state, scale=scale, roulette=est.value)
        if warning:
            warnings = (f"init: {warning}",)
        if est.value.sign == 0:
            warnings += ("init: roulette estimate is exactly zero",)
    return state, warnings


def pm_step(state: ChainState, spec: ProposalSpec, data: BinaryDataset,
            cfg: EstimatorConfig, prior,
            rng: np.random.Generator) -> tuple[ChainState, StepRecord]:
    """One pseudo-marginal MH update.

    A fresh scale and signed roulette estimate are produced for the proposal;
    acceptance compares magnitudes only (the sign never enters the ratio).
    On rejection the returned state is the input object itself, estimate
    included — regenerating it would break the augmented-space argument.
    """
    warnings: list[str] = []
    theta_prime, log_q_fwd, log_q_rev = propose(state, spec, data, prior, rng)
    scale_prime, warning = tune_scale_checked(theta_prime, cfg, rng)
    if warning:
        warnings.append(warning)
    est_prime = roulette_estimate(theta_prime, scale_prime, data.n, cfg, rng)
    log_prior_prime = prior.log_density(theta_prime)
    n = data.n

    if est_prime.value.sign == 0:
        log_alpha = -np.inf
    else:
        log_alpha = (
            log_data_term(state.suff_stat_sum, state.theta, theta_prime)
            + log_prior_prime - state.log_prior
            + log_q_rev - log_q_fwd
            + n * (np.log(scale_prime) - independence_log_partition(theta_prime))
            - n * (np.log(state.scale) - independence_log_partition(state.theta))
            + est_prime.value.log_abs - state.roulette.log_abs
        )

    if _accept(log_alpha, rng):
        new_state = ChainState(theta=theta_prime, log_prior=log_prior_prime,
                               suff_stat_sum=state.suff_stat_sum,
                               scale=scale_prime, roulette=est_prime.value)
        return new_state, StepRecord(True, pm_log_posterior_estimate(new_state, n),
                                     tuple(warnings))
    return state, StepRecord(False, pm_log_posterior_estimate(state, n),
                             tuple(warnings))


def noisy_step(state: ChainState, spec: ProposalSpec, data: BinaryDataset,
               cfg: EstimatorConfig, prior,
               rng: np.random.Generator) -> tuple[ChainState, StepRecord]:
    """One noisy MH update: the log acceptance ratio is estimated with fresh
    partition-ratio estimates at the current and proposed points.  Nothing is
    carried over between iterations, which is exactly what distinguishes this
    kernel from the pseudo-marginal one.
    """
    theta_prime, log_q_fwd, log_q_rev = propose(state, spec, data, prior, rng)
    log_prior_prime = prior.log_density(theta_prime)
    n = data.n
    log_ratio_cur = float(log_ratio_estimates(state.theta, cfg.n_samples, 1, rng)[0])
    log_ratio_prime = float(log_ratio_estimates(theta_prime, cfg.n_samples, 1, rng)[0])
    v = (
        log_data_term(state.suff_stat_sum, state.theta, theta_prime)
        + log_q_rev - log_q_fwd
        + log_prior_prime - state.log_prior
        + n * (log_ratio_cur - log_ratio_prime)
        - n * (independence_log_partition(theta_prime)
               - independence_log_partition(state.theta))
    )
    if _accept(v, rng):
        new_state = ChainState(theta=theta_prime, log_prior=log_prior_prime,
                               suff_stat_sum=state.suff_stat_sum)
        log_post = (triangle_inner(state.suff_stat_sum, theta_prime.theta)
                    + log_prior_prime
                    - n * (log_ratio_prime + independence_log_partition(theta_prime)))
        return new_state, StepRecord(True, log_post)
    log_post = (triangle_inner(state.suff_stat_sum, state.theta.theta)
                + state.log_prior
                - n * (log_ratio_cur + independence_log_partition(state.theta)))
    return state, StepRecord(False, log_post)


def exchange_step(state: ChainState, spec: ProposalSpec, data: BinaryDataset,
                  prior, inner_sweeps: int,
                  rng: np.random.Generator) -> tuple[ChainState, StepRecord]:
    """One exchange / double-MH update.

    One auxiliary vector per observation is simulated under the proposed
    parameter by Gibbs sweeps started from the observed data; the auxiliary
    potential ratio cancels the intractable normalizer ratio in expectation.
    """
    if inner_sweeps < 1:
        raise ValueError("inner_sweeps must be >= 1")
    theta_prime, log_q_fwd, log_q_rev = propose(state, spec, data, prior, rng)
    log_prior_prime = prior.log_density(theta_prime)
    aux = gibbs_sweep_batch(data.rows, theta_prime, rng, sweeps=inner_sweeps)
    aux_stats = sufficient_stats_sum(BinaryDataset(aux, validate=False))
    log_alpha = (
        log_data_term(state.suff_stat_sum, state.theta, theta_prime)
        + log_prior_prime - state.log_prior
        + log_q_rev - log_q_fwd
        + triangle_inner(aux_stats, state.theta.theta - theta_prime.theta)
    )
    if _accept(log_alpha, rng):
        new_state = ChainState(theta=theta_prime, log_prior=log_prior_prime,
                               suff_stat_sum=state.suff_stat_sum)
        return new_state, StepRecord(True, np.nan)
    return state, StepRecord(False, np.nan)


def exact_mh_step(state: ChainState, spec: ProposalSpec, data: BinaryDataset,
                  prior, rng: np.random.Generator,
                  max_p: int = 20) -> tuple[ChainState, StepRecord]:
    """Textbook MH with the brute-force partition function; the ground-truth
    kernel every approximate sampler is compared against (p capped)."""
    theta_prime, log_q_fwd, log_q_rev = propose(state, spec, data, prior, rng)
    log_prior_prime = prior.log_density(theta_prime)
    n = data.n
    lz_cur = log_partition_bruteforce(state.theta, max_p)
    lz_prime = log_partition_bruteforce(theta_prime, max_p)
    log_alpha = (
        log_data_term(state.suff_stat_sum, state.theta, theta_prime)
        + log_prior_prime - state.log_prior
        + log_q_rev - log_q_fwd
        - n * (lz_prime - lz_cur)
    )
    if _accept(log_alpha, rng):
        new_state = ChainState(theta=theta_prime, log_prior=log_prior_prime,
                               suff_stat_sum=state.suff_stat_sum)
        log_post = (triangle_inner(state.suff_stat_sum, theta_prime.theta)
                    + log_prior_prime - n * lz_prime)
        return new_state, StepRecord(True, log_post)
    log_post = (triangle_inner(state.suff_stat_sum, state.theta.theta)
                + state.log_prior - n * lz_cur)
    return state, StepRecord(False, log_post)


def run_chain(kernel: str, init: IsingParams, iterations: int, burn_in: int,
              spec: ProposalSpec, data: BinaryDataset, cfg: EstimatorConfig,
              prior, rng: np.random.Generator, *, inner_sweeps: int = 50,
              oracle_trace: bool = False) -> ChainOutput:
    """Drive one chain and collect the post-burn-in record.

    ``oracle_trace=True`` replaces each kernel's own log-posterior estimate
    with the brute-force value (p must be at or below the enumeration cap);
    otherwise the pseudo-marginal and noisy kernels report their running
    estimates and the exchange kernel, which has none, reports NaN.
    """
    if burn_in < 0 or burn_in >= iterations:
        raise ValueError("need 0 <= burn_in < iterations")
    if data.p != init.p:
        raise ValueError("data and initial parameter dimensions differ")
    start = time.perf_counter()
    state, init_warnings = init_chain_state(kernel, init, data, cfg, prior, rng)
    warnings = list(init_warnings)

    kept = iterations - burn_in
    n_free = init.n_free
    samples = np.empty((kept, n_free))
    signs = np.empty(kept, dtype=int)
    accepts = np.empty(kept, dtype=bool)
    trace = np.empty(kept)
    n = data.n

    for it in range(iterations):
        if kernel == "pm":
            state, record = pm_step(state, spec, data, cfg, prior, rng)
        elif kernel == "noisy":
            state, record = noisy_step(state, spec, data, cfg, prior, rng)
        elif kernel == "exchange":
            state, record = exchange_step(state, spec, data, prior, inner_sweeps, rng)
        else:
            state, record = exact_mh_step(state, spec, data, prior, rng,
                                          max_p=cfg.enumeration_cap)
        warnings.extend(record.warnings)
        if it < burn_in:
            continue
        i = it - burn_in
        samples[i] = pack_upper(state.theta.theta)
        signs[i] = state.roulette.sign if kernel == "pm" else 1
        accepts[i] = record.accepted
        if oracle_trace:
            trace[i] = (triangle_inner(state.suff_stat_sum, state.theta.theta)
                        + state.log_prior
                        - n * log_partition_bruteforce(state.theta,
                                                       cfg.enumeration_cap))
        else:
            trace[i] = record.log_post_est

    return ChainOutput(p=init.p, samples=samples, signs=signs,
                       accept_flags=accepts, log_post_trace=trace,
                       wall_time=time.perf_counter() - start, warnings=warnings)


def sign_weighted_mean(output: ChainOutput, h=None) -> np.ndarray:
    """Sign-reweighted posterior expectation sum(sign * h) / sum(sign).

    ``h`` maps an :class:`IsingParams` to a real vector; the default is the
    identity on the free coordinates, giving the sign-corrected posterior
    mean.  Raises when the signs cancel exactly, since the ratio is then
    undefined.
    """
    sign_sum = float(output.signs.sum())
    if sign_sum == 0:
        raise EstimationError("signs cancel exactly; sign-weighted mean undefined")
    if h is None:
        values = output.samples
    else:
        values = np.array([np.atleast_1d(np.asarray(h(output.theta_at(i)), dtype=float))
                           for i in range(output.samples.shape[0])])
    return (output.signs[:, None] * values).sum(axis=0) / sign_sum


def sign_weighted_mean_matrix(output: ChainOutput) -> IsingParams:
    """Sign-corrected posterior mean reassembled into a parameter matrix."""
    return IsingParams(unpack_upper(sign_weighted_mean(output), output.p))
