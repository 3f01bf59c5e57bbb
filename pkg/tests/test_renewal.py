from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from longbasis.errors import DomainError
from longbasis.renewal import (
    RenewalFamily,
    RenewalLaw,
    expected_jump_count,
    renewal_jump_probabilities,
)


def simulate_counts(law: RenewalLaw, t: float, n_paths: int,
                    seed: int) -> np.ndarray:
    """Independent oracle: sequential inter-arrival draws, chunked."""
    rng = np.random.default_rng(seed)
    clock = np.zeros(n_paths)
    counts = np.zeros(n_paths, dtype=np.int64)
    active = np.ones(n_paths, dtype=bool)
    while active.any():
        draws = law.sample_interarrivals(rng, int(active.sum()))
        clock[active] += draws
        arrived = np.zeros(n_paths, dtype=bool)
        arrived[active] = clock[active] <= t
        counts[arrived] += 1
        active = arrived
    return counts


def test_no_time_no_renewals():
    law = RenewalLaw(RenewalFamily.GAMMA, 2.0, 0.5)
    p = renewal_jump_probabilities(1e-12, law, n_max=5)
    assert p[0] == pytest.approx(1.0, abs=1e-9)
    assert p[1:].sum() <= 1e-9


def test_gamma_shape_one_reduces_to_poisson():
    # exponential inter-arrivals at rate beta: N(t) ~ Poisson(beta * t)
    beta = 1.0
    law = RenewalLaw(RenewalFamily.GAMMA, 1.0, beta)
    p = renewal_jump_probabilities(1.0, law, n_max=5, tol=1e-15)
    for n in range(6):
        assert p[n] == pytest.approx(stats.poisson.pmf(n, beta * 1.0),
                                     abs=1e-10)


def test_gamma_quadrature_matches_closed_form():
    law = RenewalLaw(RenewalFamily.GAMMA, 2.0, 0.8)
    exact = renewal_jump_probabilities(1.0, law, n_max=6, tol=1e-15)
    quad = renewal_jump_probabilities(1.0, law, n_max=6, tol=1e-15,
                                      force_quadrature=True)
    n = min(exact.size, quad.size)
    assert np.max(np.abs(exact[:n] - quad[:n])) <= 1e-8


def test_weibull_against_monte_carlo():
    law = RenewalLaw(RenewalFamily.WEIBULL, 1.5, 2.0)
    p = renewal_jump_probabilities(1.0, law, n_max=6, tol=1e-12)
    counts = simulate_counts(law, 1.0, 400_000, seed=7)
    for n in range(4):
        phat = float(np.mean(counts == n))
        se = max(np.sqrt(phat * (1 - phat) / counts.size), 1e-6)
        assert abs(p[n] - phat) <= 3.0 * se, f"n={n}: {p[n]} vs {phat}"


def test_probabilities_nonnegative_and_bounded():
    for family, alpha, beta in [(RenewalFamily.GAMMA, 0.7, 1.2),
                                (RenewalFamily.GAMMA, 3.0, 0.2),
                                (RenewalFamily.WEIBULL, 0.8, 1.0),
                                (RenewalFamily.WEIBULL, 2.0, 0.5)]:
        law = RenewalLaw(family, alpha, beta)
        p = renewal_jump_probabilities(2.0, law, n_max=12, tol=1e-9)
        assert np.all(p >= 0.0)
        assert p.sum() <= 1.0 + 1e-9


def test_truncation_stops_when_tail_small():
    # nearly-deterministic long inter-arrivals: only P(0) matters
    law = RenewalLaw(RenewalFamily.GAMMA, 50.0, 1.0)
    p = renewal_jump_probabilities(1.0, law, n_max=10, tol=1e-9)
    assert p.size <= 2
    assert p[0] == pytest.approx(1.0, abs=1e-9)


def test_invalid_inputs():
    law = RenewalLaw(RenewalFamily.GAMMA, 1.0, 1.0)
    with pytest.raises(DomainError):
        renewal_jump_probabilities(0.0, law)
    with pytest.raises(DomainError):
        renewal_jump_probabilities(1.0, law, n_max=-1)
    with pytest.raises(DomainError):
        RenewalLaw(RenewalFamily.GAMMA, -1.0, 1.0)


def test_expected_count_matches_elementary_rate():
    # Poisson special case: E[N(t)] = beta * t
    law = RenewalLaw(RenewalFamily.GAMMA, 1.0, 0.6)
    assert expected_jump_count(2.0, law, n_max=40, tol=1e-14) == \
        pytest.approx(1.2, abs=1e-6)
