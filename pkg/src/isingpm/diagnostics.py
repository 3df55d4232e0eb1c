"""Chain quality metrics: autocorrelation, effective sample size,
parameter-recovery error, and sign agreement between fitted interaction maps."""

from __future__ import annotations

import warnings as _warnings
from dataclasses import dataclass

import numpy as np

from .ising import IsingParams
from .samplers import ChainOutput, sign_weighted_mean_matrix


@dataclass
class DiagnosticsReport:
    ess_per_coordinate: np.ndarray
    mean_ess: float
    median_ess: float
    mse: float | None
    acceptance_rate: float
    wall_minutes: float
    ess_per_minute: float

    def as_dict(self) -> dict:
        return {
            "ess_per_coordinate": [float(x) for x in self.ess_per_coordinate],
            "mean_ess": float(self.mean_ess),
            "median_ess": float(self.median_ess),
            "mse": None if self.mse is None else float(self.mse),
            "acceptance_rate": float(self.acceptance_rate),
            "wall_minutes": float(self.wall_minutes),
            "ess_per_minute": float(self.ess_per_minute),
        }


def autocorrelation(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelations at lags 1..max_lag with biased (1/T)
    normalization.  A constant series has no autocorrelation structure; it
    yields zeros and a warning.
    """
    series = np.asarray(series, dtype=float)
    t0 = series.size
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    if t0 < 2 * max_lag:
        raise ValueError(f"series of length {t0} too short for max_lag {max_lag}")
    centered = series - series.mean()
    denom = float(centered @ centered)
    if denom == 0.0:
        _warnings.warn("constant series: autocorrelations set to zero")
        return np.zeros(max_lag)
    # FFT convolution gives all lags at once in O(T log T).
    size = 1 << int(np.ceil(np.log2(2 * t0 - 1)))
    f = np.fft.rfft(centered, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[: max_lag + 1]
    return acov[1:] / denom


def effective_sample_size(series) -> float:
    """T / (1 + 2 sum of autocorrelations), truncated by Geyer's
    initial-positive-sequence rule: sum consecutive lag pairs
    (rho_2m + rho_2m+1) until the first non-positive pair.  Clamped to
    (0, T].
    """
    series = np.asarray(series, dtype=float)
    t0 = series.size
    if t0 < 100:
        raise ValueError("need at least 100 samples for a meaningful estimate")
    max_lag = t0 // 2
    centered = series - series.mean()
    denom = float(centered @ centered)
    if denom == 0.0:
        return float(t0)
    size = 1 << int(np.ceil(np.log2(2 * t0 - 1)))
    f = np.fft.rfft(centered, size)
    rho = np.fft.irfft(f * np.conjugate(f), size)[: max_lag + 1] / denom

    tau = 0.0
    m = 0
    while 2 * m + 1 <= max_lag:
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0.0:
            break
        tau += 2.0 * pair
        m += 1
    tau -= 1.0  # rho_0 was double counted by the pairing
    tau = max(tau, 1e-12)
    return float(min(t0 / tau, float(t0)))


def recovery_mse(theta_hat: IsingParams, theta_true: IsingParams) -> float:
    """Squared Frobenius distance between the full matrices, scaled by p^2."""
    if theta_hat.p != theta_true.p:
        raise ValueError("dimension mismatch between estimate and truth")
    diff = theta_hat.theta - theta_true.theta
    return float(np.sum(diff**2) / theta_hat.p**2)


def sign_agreement(theta_a: IsingParams, theta_b: IsingParams,
                   threshold: float) -> float:
    """Fraction of free coordinates whose sign category (-, 0, +) matches
    after zeroing every entry with magnitude at or below the threshold."""
    if theta_a.p != theta_b.p:
        raise ValueError("dimension mismatch between the two estimates")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    a = theta_a.free_vector()
    b = theta_b.free_vector()
    cat_a = np.sign(a) * (np.abs(a) > threshold)
    cat_b = np.sign(b) * (np.abs(b) > threshold)
    return float(np.mean(cat_a == cat_b))


def build_report(output: ChainOutput, theta_true: IsingParams | None = None) -> DiagnosticsReport:
    """Summarize one chain: per-coordinate ESS over the kept samples,
    acceptance rate, wall time, and (when the truth is known) the recovery
    error of the sign-corrected posterior mean."""
    ess = np.array([effective_sample_size(output.samples[:, j])
                    for j in range(output.samples.shape[1])])
    mse = None
    if theta_true is not None:
        mse = recovery_mse(sign_weighted_mean_matrix(output), theta_true)
    wall_minutes = output.wall_time / 60.0
    mean_ess = float(ess.mean())
    return DiagnosticsReport(
        ess_per_coordinate=ess,
        mean_ess=mean_ess,
        median_ess=float(np.median(ess)),
        mse=mse,
        acceptance_rate=float(np.mean(output.accept_flags)),
        wall_minutes=wall_minutes,
        ess_per_minute=mean_ess / wall_minutes if wall_minutes > 0 else np.inf,
    )
