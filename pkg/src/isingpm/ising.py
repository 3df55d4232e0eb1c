"""Binary pairwise interaction model: potentials, independence-model sampling,
Gibbs sweeps, and brute-force partition-function oracles.

Conventions used throughout the package:

* A model on x in {0,1}^p is parameterized by a symmetric p x p matrix theta.
  The unnormalized log density is the quadratic form

      log_potential(x) = x' theta x
                       = sum_j theta[j,j] x_j + 2 * sum_{j<k} theta[j,k] x_j x_k,

  so each off-diagonal coordinate contributes twice (once per ordered pair).
  The free coordinates of the model are the upper triangle including the
  diagonal, p*(p+1)/2 numbers in total.
* The independence model of theta keeps the diagonal and zeroes the
  interactions.  Its normalizer factorizes over coordinates and is the only
  partition function this package ever evaluates outside of brute-force
  oracles.
* Everything normalizer-related is handled in log scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

ENUMERATION_CAP = 20
# Chunk size for brute-force enumeration; keeps peak memory around 50 MB at p=20.
_ENUM_CHUNK = 1 << 16


def sigmoid(t):
    """Overflow-safe logistic function, scalar or array."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    et = np.exp(t[~pos])
    out[~pos] = et / (1.0 + et)
    return out if out.ndim else float(out)


def pack_upper(theta: np.ndarray) -> np.ndarray:
    """Pack a symmetric matrix into its upper triangle, row-major, diagonal included."""
    theta = np.asarray(theta, dtype=float)
    p = theta.shape[0]
    iu, ju = np.triu_indices(p)
    return theta[iu, ju].copy()


def unpack_upper(vec: np.ndarray, p: int) -> np.ndarray:
    """Inverse of :func:`pack_upper`: rebuild the full symmetric matrix."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (p * (p + 1) // 2,):
        raise ValueError(f"packed vector has length {vec.size}, expected {p*(p+1)//2}")
    theta = np.zeros((p, p))
    iu, ju = np.triu_indices(p)
    theta[iu, ju] = vec
    theta[ju, iu] = vec
    return theta


def triangle_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Inner product over the free coordinates: sum_{j<=k} a[j,k] * b[j,k].

    For symmetric a, b this equals (full elementwise sum + diagonal sum) / 2.
    """
    return float((np.sum(a * b) + np.sum(np.diagonal(a) * np.diagonal(b))) / 2.0)


@dataclass(frozen=True)
class IsingParams:
    """Symmetric interaction matrix of a binary pairwise model.

    Parameters
    ----------
    theta : (p, p) ndarray
        Symmetric matrix of finite reals.  Stored read-only.
    bound : float, optional
        If given, every entry must satisfy ``|theta[j,k]| <= bound`` (the
        box-constrained parameter space used by the bounded-support analysis
        of the noisy kernel).
    """

    theta: np.ndarray
    bound: float | None = None

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
            raise ValueError(f"theta must be square, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta entries must be finite")
        if not np.array_equal(theta, theta.T):
            raise ValueError("theta must be symmetric")
        if self.bound is not None and np.any(np.abs(theta) > self.bound):
            raise ValueError(f"theta entries exceed configured bound {self.bound}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def p(self) -> int:
        return self.theta.shape[0]

    @property
    def n_free(self) -> int:
        return self.p * (self.p + 1) // 2

    def diagonal_model(self) -> "IsingParams":
        """The independence model: same diagonal, interactions zeroed."""
        return IsingParams(np.diag(np.diagonal(self.theta)))

    def free_vector(self) -> np.ndarray:
        return pack_upper(self.theta)

    @classmethod
    def from_free_vector(cls, vec: np.ndarray, p: int) -> "IsingParams":
        return cls(unpack_upper(vec, p))

    def offdiagonal(self) -> np.ndarray:
        off = self.theta.copy()
        np.fill_diagonal(off, 0.0)
        return off


@dataclass(frozen=True)
class BinaryDataset:
    """n observations of a length-p binary vector, stored as an (n, p) float array."""

    rows: np.ndarray
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2:
            raise ValueError(f"rows must be 2-d, got shape {rows.shape}")
        if rows.shape[0] < 1 or rows.shape[1] < 1:
            raise ValueError(f"dataset must be nonempty, got shape {rows.shape}")
        if self.validate and not np.all((rows == 0.0) | (rows == 1.0)):
            raise ValueError("dataset entries must all be 0 or 1")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def p(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class SignedLogValue:
    """A real number stored as (sign, log|value|); the zero value is (0, -inf)."""

    sign: int
    log_abs: float

    def __post_init__(self):
        if self.sign not in (-1, 0, 1):
            raise ValueError(f"sign must be -1, 0 or +1, got {self.sign}")
        if (self.sign == 0) != (self.log_abs == -np.inf):
            raise ValueError("sign == 0 iff log_abs == -inf")

    @classmethod
    def from_float(cls, x: float) -> "SignedLogValue":
        if x == 0.0:
            return cls(0, -np.inf)
        return cls(1 if x > 0 else -1, float(np.log(abs(x))))

    @property
    def value(self) -> float:
        if self.sign == 0:
            return 0.0
        return self.sign * float(np.exp(self.log_abs))

    def scaled(self, log_factor: float) -> "SignedLogValue":
        """Multiply by the positive number exp(log_factor)."""
        if self.sign == 0:
            return self
        return SignedLogValue(self.sign, self.log_abs + float(log_factor))


def _check_vector(x, p: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (p,):
        raise ValueError(f"configuration has shape {x.shape}, model expects ({p},)")
    return x


def log_potential(x, params: IsingParams) -> float:
    """Quadratic-form log potential x' theta x of one binary configuration."""
    x = _check_vector(x, params.p)
    return float(x @ params.theta @ x)


def log_potential_batch(rows: np.ndarray, params: IsingParams) -> np.ndarray:
    """Row-wise x' theta x for an (n, p) batch of configurations."""
    return np.einsum("ij,jk,ik->i", rows, params.theta, rows, optimize=True)


def log_potential_ratio(x, params: IsingParams) -> float:
    """log of potential(x; theta) / potential(x; independence model).

    Diagonal terms cancel exactly, so only the interaction part
    2 * sum_{j<k} theta[j,k] x_j x_k is ever computed.
    """
    x = _check_vector(x, params.p)
    return float(x @ params.offdiagonal() @ x)


def log_potential_ratio_batch(rows: np.ndarray, offdiag: np.ndarray) -> np.ndarray:
    """Batched interaction-only log ratio; ``offdiag`` is theta with zero diagonal."""
    return np.einsum("ij,jk,ik->i", rows, offdiag, rows, optimize=True)


def independence_log_partition(params: IsingParams) -> float:
    """log normalizer of the independence model: sum_j log(1 + exp(theta[j,j])).

    Each term is evaluated as logaddexp(0, t), which is exact for large |t|.
    """
    return float(np.sum(np.logaddexp(0.0, np.diagonal(params.theta))))


@lru_cache(maxsize=8)
def _configurations(p: int) -> np.ndarray:
    """All 2^p binary configurations as a (2^p, p) float array (small p only)."""
    idx = np.arange(1 << p, dtype=np.uint32)
    return ((idx[:, None] >> np.arange(p, dtype=np.uint32)) & 1).astype(float)


def enumerate_configurations(p: int) -> np.ndarray:
    """Public read-only view of the full configuration table for p <= 14."""
    if p > 14:
        raise ValueError("full configuration table is only materialized for p <= 14")
    return _configurations(p)


def log_partition_bruteforce(params: IsingParams, max_p: int = ENUMERATION_CAP) -> float:
    """Exact log partition function by summing over all 2^p configurations.

    This is the project-wide oracle.  Refuses when p exceeds ``max_p``
    (default 20, about 10^6 states).
    """
    p = params.p
    if p > max_p:
        raise ValueError(f"brute-force enumeration refused: p={p} exceeds cap {max_p}")
    if p <= 14:
        vals = log_potential_batch(_configurations(p), params)
        m = float(np.max(vals))
        return m + float(np.log(np.sum(np.exp(vals - m))))
    # Chunked enumeration: combine per-chunk log-sum-exp values pairwise.
    partial = []
    total = 1 << p
    shifts = np.arange(p, dtype=np.uint64)
    for start in range(0, total, _ENUM_CHUNK):
        idx = np.arange(start, min(start + _ENUM_CHUNK, total), dtype=np.uint64)
        rows = ((idx[:, None] >> shifts) & 1).astype(float)
        vals = log_potential_batch(rows, params)
        m = float(np.max(vals))
        partial.append(m + np.log(np.sum(np.exp(vals - m))))
    return float(np.logaddexp.reduce(partial))


def draw_independence_matrix(params: IsingParams, count: int, rng: np.random.Generator) -> np.ndarray:
    """(count, p) i.i.d. draws from the independence model, unvalidated float array."""
    probs = sigmoid(np.diagonal(params.theta))
    return (rng.random((count, params.p)) < probs).astype(float)


def sample_independence(params: IsingParams, count: int, rng: np.random.Generator) -> BinaryDataset:
    """Draw ``count`` i.i.d. vectors with coordinate j ~ Bernoulli(sigmoid(theta[j,j]))."""
    if count < 1:
        raise ValueError("count must be positive")
    return BinaryDataset(draw_independence_matrix(params, count, rng), validate=False)


def conditional_logit(j: int, x, params: IsingParams) -> float:
    """Logit of the full conditional of coordinate j (0-based) given the rest:

        theta[j,j] + 2 * sum_{k != j} theta[j,k] x_k.
    """
    p = params.p
    if not 0 <= j < p:
        raise ValueError(f"coordinate index {j} out of range for p={p}")
    x = _check_vector(x, p)
    t = params.theta
    return float(t[j, j] + 2.0 * (t[j] @ x - t[j, j] * x[j]))


def gibbs_sweep(x, params: IsingParams, rng: np.random.Generator) -> np.ndarray:
    """One systematic-scan Gibbs sweep: resample coordinates 0..p-1 in order,
    each from its full conditional given the current, partially updated state.
    """
    x = _check_vector(x, params.p).copy()
    t = params.theta
    for j in range(params.p):
        logit = t[j, j] + 2.0 * (t[j] @ x - t[j, j] * x[j])
        x[j] = 1.0 if rng.random() < sigmoid(logit) else 0.0
    return x


def gibbs_sweep_batch(rows: np.ndarray, params: IsingParams, rng: np.random.Generator,
                      sweeps: int = 1) -> np.ndarray:
    """Run ``sweeps`` systematic-scan sweeps on n independent chains at once.

    Each row of ``rows`` is its own chain; one uniform is consumed per site
    per row per sweep, site-major.
    """
    rows = np.array(rows, dtype=float)
    t = params.theta
    p = params.p
    for _ in range(sweeps):
        for j in range(p):
            logits = t[j, j] + 2.0 * (rows @ t[j] - t[j, j] * rows[:, j])
            rows[:, j] = (rng.random(rows.shape[0]) < sigmoid(logits)).astype(float)
    return rows


def sufficient_stats(x) -> np.ndarray:
    """Gradient of the log potential with respect to the free coordinates,
    stored as a symmetric matrix: S[j,j] = x_j, S[j,k] = 2 x_j x_k for j != k.

    Under :func:`triangle_inner`, <S, theta> equals the log potential.
    """
    x = np.asarray(x, dtype=float)
    s = 2.0 * np.outer(x, x)
    np.fill_diagonal(s, x)
    return s


def sufficient_stats_sum(data: BinaryDataset) -> np.ndarray:
    """Sum of sufficient_stats over all rows of a dataset, computed in one pass."""
    rows = data.rows
    s = 2.0 * (rows.T @ rows)
    np.fill_diagonal(s, rows.sum(axis=0))
    return s
