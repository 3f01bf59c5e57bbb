from __future__ import annotations

import dataclasses
import warnings

import numpy as np
import pytest

from longbasis.engine import (
    ModelChoice,
    ScenarioConfig,
    _prepare_base,
    _run_scenario,
    bootstrap_scenarios,
    load_scenarios,
    save_scenarios,
    simulate_lives,
)
from longbasis.errors import DomainError
from longbasis.jumpdiffusion import JumpDiffusionParams
from longbasis.bookmodels import AR1Params
from longbasis.panels import MortalityPanel, PopulationTag
from longbasis.rngstreams import child_stream

from conftest import make_panel

AGES = np.arange(60, 80)
YEARS = np.arange(1985, 2016)


@pytest.fixture(scope="module")
def world():
    rng = np.random.default_rng(100)
    a = -4.1 + 0.09 * (AGES - 60)
    b_raw = np.exp(-0.03 * (AGES - 60))
    b = b_raw / b_raw.sum()
    k = np.cumsum(-0.3 + 0.25 * rng.standard_normal(YEARS.size))
    k -= k.mean()
    m = np.exp(a[:, None] + np.outer(b, k))
    e_ref = np.full(m.shape, 2e5)
    ref = MortalityPanel(PopulationTag.REFERENCE, AGES, YEARS,
                         np.maximum(rng.poisson(m * e_ref), 1).astype(float),
                         e_ref)
    a_b = np.full(AGES.size, -0.35)
    k_b = rng.normal(0, 0.15, YEARS.size)
    k_b -= k_b.mean()
    m_b = m * np.exp(a_b[:, None] + np.outer(b, k_b))
    e_b = np.full(m.shape, 3e4)
    book = MortalityPanel(PopulationTag.BOOK, AGES, YEARS,
                          np.maximum(rng.poisson(m_b * e_b), 1).astype(float),
                          e_b)
    return ref, book


def small_cfg(**kw):
    defaults = dict(n_scenarios=6, horizon=8, master_seed=77,
                    book_size_l65=5000, calibration_starts=2,
                    scenario_calibration_maxiter=40)
    defaults.update(kw)
    return ScenarioConfig(**defaults)


def test_simulate_lives_bounds_and_trivials():
    rng = child_stream(0, 0)
    with pytest.raises(DomainError):
        simulate_lives(10, [0.0, 0.5], rng)
    with pytest.raises(DomainError):
        simulate_lives(10, [0.5, 1.0], rng)
    near_zero = simulate_lives(1000, np.full(5, 1e-15), child_stream(0, 1))
    assert np.all(near_zero == 1000)
    near_one = simulate_lives(1000, np.full(5, 1.0 - 1e-15), child_stream(0, 2))
    assert near_one[0] == 1000 and np.all(near_one[1:] == 0)


def test_simulate_lives_mean_matches_binomial():
    q0 = 0.07
    n = 200_000
    rng = child_stream(1, 0)
    first = np.array([simulate_lives(500, [q0], rng)[1] for _ in range(n)])
    expected = 500 * (1 - q0)
    se = first.std() / np.sqrt(n)
    assert abs(first.mean() - expected) <= 3 * se


def test_simulate_lives_nonincreasing_integer():
    rng = child_stream(2, 0)
    lives = simulate_lives(10_000, np.linspace(0.02, 0.2, 10), rng)
    assert lives.dtype == np.uint32
    assert np.all(np.diff(lives.astype(int)) <= 0)


@pytest.mark.filterwarnings("ignore")
def test_bootstrap_bit_reproducible_and_threads_invariant(world):
    ref, book = world
    cfg = small_cfg()
    s1 = bootstrap_scenarios(ref, book, cfg)
    s2 = bootstrap_scenarios(ref, book, cfg)
    assert np.array_equal(s1.ref_m, s2.ref_m)
    assert np.array_equal(s1.book_q, s2.book_q)
    assert np.array_equal(s1.lives, s2.lives)
    cfg_threads = small_cfg(threads=2)
    s3 = bootstrap_scenarios(ref, book, cfg_threads)
    assert np.array_equal(s1.ref_m, s3.ref_m)
    assert np.array_equal(s1.lives, s3.lives)


@pytest.mark.filterwarnings("ignore")
def test_bootstrap_shapes_and_invariants(world):
    ref, book = world
    cfg = small_cfg(n_scenarios=10)
    ss = bootstrap_scenarios(ref, book, cfg)
    assert ss.ref_m.shape == (10, AGES.size, cfg.horizon)
    assert ss.lives.shape == (10, cfg.horizon + 1)
    assert np.all(ss.lives[:, 0] == cfg.book_size_l65)
    assert np.all(np.diff(ss.lives.astype(np.int64), axis=1) <= 0)
    assert np.all(ss.ref_m > 0) and np.all(ss.book_m > 0)
    assert np.all((ss.book_q > 0) & (ss.book_q < 1))
    # q = 1 - exp(-m) consistency
    assert np.max(np.abs(ss.book_q - (-np.expm1(-ss.book_m)))) <= 1e-12
    assert list(ss.future_years) == list(range(2016, 2016 + cfg.horizon))


@pytest.mark.filterwarnings("ignore")
def test_no_resample_zero_variance_matches_central_projection(world):
    ref, book = world
    cfg = small_cfg(n_scenarios=1, resample=False)
    base = _prepare_base(ref, book, cfg)
    # zero-variance dynamics: deterministic drift, unreachable jumps, flat AR
    base.jump = dataclasses.replace(
        base.jump,
        params=JumpDiffusionParams(mu=base.jump.params.mu, sigma=0.0,
                                   eta=base.jump.params.eta,
                                   alpha=1e6, beta=1.0,
                                   k0=float(base.ref_fit.params.k[-1])))
    base.ar1 = AR1Params(psi0=0.0, psi1=1.0, innovation_sd=0.0,
                         stationary=False)
    res = _run_scenario(base, cfg, 0, 0)
    k_path = base.jump.params.k0 + base.jump.params.mu * np.arange(1, 9)
    expected = np.exp(base.ref_fit.params.a[:, None]
                      + np.outer(base.ref_fit.params.b, k_path))
    assert np.max(np.abs(res["ref_m"] - expected)) <= 1e-12
    k_b = float(base.book_fit.k[-1])
    expected_book = expected * np.exp(base.book_fit.a[:, None]
                                      + np.outer(base.book_fit.b_ref,
                                                 np.full(8, k_b)))
    assert np.max(np.abs(res["book_m"] - expected_book)) <= 1e-12


@pytest.mark.filterwarnings("ignore")
def test_resampled_deaths_mean_matches_poisson_mean(world):
    ref, book = world
    cfg = small_cfg()
    base = _prepare_base(ref, book, cfg)
    cells = [(0, 0), (5, 10), (19, 30)]
    n = 4000
    sums = np.zeros(len(cells))
    for s in range(n):
        rng = child_stream(cfg.master_seed, s, 0)
        draws = rng.poisson(base.ref_mu_hat)
        for i, (x, t) in enumerate(cells):
            sums[i] += draws[x, t]
    for i, (x, t) in enumerate(cells):
        mean_hat = sums[i] / n
        mu = base.ref_mu_hat[x, t]
        se = np.sqrt(mu / n)
        assert abs(mean_hat - mu) <= 3 * se


@pytest.mark.filterwarnings("ignore")
def test_fan_widens_with_horizon(world):
    ref, book = world
    cfg = small_cfg(n_scenarios=120, horizon=10)
    ss = bootstrap_scenarios(ref, book, cfg)
    i65 = int(np.searchsorted(ss.ages, 65))
    m65 = ss.ref_m[:, i65, :]
    band = np.percentile(m65, 90, axis=0) - np.percentile(m65, 10, axis=0)
    rel_band = band / np.median(m65, axis=0)
    assert rel_band[-1] > rel_band[0]
    assert np.all(np.diff(np.maximum.accumulate(rel_band)) >= 0)


@pytest.mark.filterwarnings("ignore")
def test_large_book_survival_converges_to_product(world):
    ref, book = world
    cfg = small_cfg(n_scenarios=3, book_size_l65=1_000_000)
    ss = bootstrap_scenarios(ref, book, cfg)
    q = ss.book_q_cohort(cfg.annuity_start_age)
    for s in range(3):
        expected_frac = np.prod(1.0 - q[s])
        realized_frac = ss.lives[s, -1] / ss.lives[s, 0]
        assert abs(realized_frac - expected_frac) <= 1e-3


@pytest.mark.filterwarnings("ignore")
def test_model_conformance_same_shapes(world):
    ref, book = world
    sets = {}
    for model in ModelChoice:
        cfg = small_cfg(n_scenarios=4, model_choice=model)
        sets[model] = bootstrap_scenarios(ref, book, cfg)
    shapes = {m: (tuple(s.ref_m.shape), tuple(s.lives.shape),
                  tuple(s.future_years), tuple(s.ages))
              for m, s in sets.items()}
    assert len(set(shapes.values())) == 1


@pytest.mark.filterwarnings("ignore")
def test_save_load_roundtrip_and_byte_stability(tmp_path, world):
    ref, book = world
    cfg = small_cfg(n_scenarios=5)
    ss = bootstrap_scenarios(ref, book, cfg)
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    save_scenarios(ss, out1)
    save_scenarios(ss, out2)
    assert (out1 / "scenarios.bin").read_bytes() == \
        (out2 / "scenarios.bin").read_bytes()
    assert (out1 / "manifest.json").read_bytes() == \
        (out2 / "manifest.json").read_bytes()
    loaded = load_scenarios(out1)
    assert np.array_equal(loaded.ref_m, ss.ref_m)
    assert np.array_equal(loaded.book_m, ss.book_m)
    assert np.array_equal(loaded.book_q, ss.book_q)
    assert np.array_equal(loaded.lives, ss.lives)
    assert loaded.config == ss.config
    assert np.array_equal(loaded.future_years, ss.future_years)
