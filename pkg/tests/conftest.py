"""Shared fixtures and independent oracles.

The oracles here deliberately avoid the library's vectorized code paths:
log potentials are computed with explicit double loops and partition sums
with itertools enumeration, so agreement with the package is a real
cross-check rather than a tautology.
"""

import itertools
import math

import numpy as np
import pytest

from isingpm.ising import IsingParams


def oracle_log_potential(x, theta) -> float:
    """x' theta x by explicit double loop."""
    p = len(x)
    total = 0.0
    for j in range(p):
        for k in range(p):
            total += x[j] * theta[j][k] * x[k]
    return total


def oracle_log_partition(theta) -> float:
    """log sum over all configurations of exp(x' theta x), pure Python."""
    p = len(theta)
    vals = [oracle_log_potential(x, theta) for x in itertools.product((0, 1), repeat=p)]
    m = max(vals)
    return m + math.log(sum(math.exp(v - m) for v in vals))


def oracle_distribution(theta) -> dict:
    """Exact probability of every configuration, keyed by the binary tuple."""
    p = len(theta)
    log_z = oracle_log_partition(theta)
    return {
        x: math.exp(oracle_log_potential(x, theta) - log_z)
        for x in itertools.product((0, 1), repeat=p)
    }


def oracle_moment(theta, h) -> float:
    """Exact expectation of h(x) under the model."""
    return sum(prob * h(np.array(x, dtype=float))
               for x, prob in oracle_distribution(theta).items())


def oracle_mu(theta) -> float:
    """z(theta) / z(diag(theta)) by enumeration."""
    diag = np.diag(np.diagonal(theta))
    return math.exp(oracle_log_partition(theta) - oracle_log_partition(diag))


def random_symmetric(rng, p, scale=1.0) -> IsingParams:
    m = rng.normal(0.0, scale, (p, p))
    return IsingParams((m + m.T) / 2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def params3(rng):
    return random_symmetric(rng, 3, scale=0.6)
