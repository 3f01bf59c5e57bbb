from __future__ import annotations

import numpy as np
import pytest

from longbasis import paramio
from longbasis.altmodels import (
    JOINT_STATES,
    LCCohortsFit,
    ZhouStyleParams,
    fit_lc_cohorts,
    fit_zhou,
    import_zhou,
    simulate_zhou,
)
from longbasis.panels import MortalityPanel, PopulationTag
from longbasis.rngstreams import child_stream

from conftest import FIXTURE_DIR


AGES = np.arange(60, 80)
YEARS = np.arange(1980, 2012)


def _two_population_world(seed, jump_years=(), jump_size=0.0):
    rng = np.random.default_rng(seed)
    a1 = -4.1 + 0.09 * (AGES - 60)
    b_raw = np.exp(-0.025 * (AGES - 60))
    b1 = b_raw / b_raw.sum()
    k1 = np.cumsum(-0.3 + 0.25 * rng.standard_normal(YEARS.size))
    k1 = k1 - k1.mean()
    for y in jump_years:
        k1[y] += jump_size
    a2 = a1 - 0.4
    k2 = k1 + rng.normal(0, 0.15, YEARS.size)
    m1 = np.exp(a1[:, None] + np.outer(b1, k1))
    m2 = np.exp(a2[:, None] + np.outer(b1, k2))
    e1 = np.full(m1.shape, 2e5)
    e2 = np.full(m2.shape, 3e4)
    ref = MortalityPanel(PopulationTag.REFERENCE, AGES, YEARS,
                         np.maximum(rng.poisson(m1 * e1), 1).astype(float), e1)
    book = MortalityPanel(PopulationTag.BOOK, AGES, YEARS,
                          np.maximum(rng.poisson(m2 * e2), 1).astype(float), e2)
    return ref, book


def test_zhou_fixture_loads_bit_exact():
    raw = paramio.read_params(FIXTURE_DIR / "jump_model_book_params.csv")
    assert raw["a2"][60] == -0.8348
    assert raw["b2"][60] == 0.0234
    assert raw["a2"][89] == -0.4136
    assert raw["mu_k"] == -0.4973
    assert raw["mu_y1"] == 4.2915
    assert raw["v_y1"] == 0.5608
    assert raw["phi_dk"] == 0.0496
    pmf = np.array([raw["pmf"][i] for i in range(4)])
    assert pmf[0] == 0.7763 and pmf[1] == 0.0967 and pmf[3] == 0.1269
    assert pmf.sum() == pytest.approx(1.0, abs=1e-12)


def test_cohort_fixture_loads_bit_exact():
    raw = paramio.read_params(FIXTURE_DIR / "cohort_model_book_a.csv")
    assert raw["a"][60] == -0.5431
    assert raw["a"][89] == -0.2944


def test_fit_zhou_no_jump_data_concentrates_on_no_jump_state():
    masses = []
    for seed in range(10):
        ref, book = _two_population_world(seed)
        params = fit_zhou(ref, book)
        masses.append(params.jump_joint_pmf[0])
    assert np.median(masses) >= 0.9


def test_simulate_zhou_deterministic_limit():
    p = ZhouStyleParams(
        ages=AGES, a1=np.zeros(AGES.size), b1=np.full(AGES.size, 0.05),
        a2=np.zeros(AGES.size), b2=np.full(AGES.size, 0.05),
        mu_k=-0.5, v_z=1e-30, mu_y1=1.0, v_y1=1e-30, mu_y2=1.0, v_y2=1e-30,
        mu_dk=0.2, phi_dk=0.5, v_zdk=1e-30,
        jump_joint_pmf=np.array([1.0, 0.0, 0.0, 0.0]),
        k0_1=0.0, delta0=1.0)
    k1, k2 = simulate_zhou(p, 6, child_stream(0, 0))
    expected_k1 = -0.5 * np.arange(1, 7)
    delta = 1.0
    expected_k2 = []
    for t in range(6):
        delta = 0.2 + 0.5 * delta
        expected_k2.append(expected_k1[t] - delta)
    assert np.allclose(k1, expected_k1, atol=1e-12)
    assert np.allclose(k2, expected_k2, atol=1e-12)


def test_simulate_zhou_spread_long_run_mean():
    p = ZhouStyleParams(
        ages=AGES, a1=np.zeros(AGES.size), b1=np.full(AGES.size, 0.05),
        a2=np.zeros(AGES.size), b2=np.full(AGES.size, 0.05),
        mu_k=0.0, v_z=0.04, mu_y1=1.0, v_y1=0.25, mu_y2=1.0, v_y2=0.25,
        mu_dk=0.3, phi_dk=0.6, v_zdk=0.01,
        jump_joint_pmf=np.array([1.0, 0.0, 0.0, 0.0]),
        k0_1=0.0, delta0=0.0)
    rng = child_stream(1, 1)
    horizon = 150
    n = 20_000
    finals = np.empty(n)
    for i in range(n):
        k1, k2 = simulate_zhou(p, horizon, rng)
        finals[i] = k1[-1] - k2[-1]
    long_run = p.mu_dk / (1.0 - p.phi_dk)
    se = finals.std() / np.sqrt(n)
    assert abs(finals.mean() - long_run) <= 3 * se


def test_simulate_zhou_same_seed_reproducible():
    raw = paramio.read_params(FIXTURE_DIR / "jump_model_book_params.csv")
    ages = np.array(sorted(raw["a2"].keys()))
    p = ZhouStyleParams(
        ages=ages,
        a1=paramio.vector(raw, "a2", ages), b1=paramio.vector(raw, "b2", ages),
        a2=paramio.vector(raw, "a2", ages), b2=paramio.vector(raw, "b2", ages),
        mu_k=float(raw["mu_k"]), v_z=float(raw["v_z"]),
        mu_y1=float(raw["mu_y1"]), v_y1=float(raw["v_y1"]),
        mu_y2=float(raw["mu_y2"]), v_y2=float(raw["v_y2"]),
        mu_dk=float(raw["mu_dk"]), phi_dk=float(raw["phi_dk"]), v_zdk=0.1,
        jump_joint_pmf=np.array([raw["pmf"][i] for i in range(4)]))
    a = simulate_zhou(p, 20, child_stream(2, 2))
    b = simulate_zhou(p, 20, child_stream(2, 2))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_simulate_zhou_degenerate_pmf_matches_stripped_oracle():
    p = ZhouStyleParams(
        ages=AGES, a1=np.zeros(AGES.size), b1=np.full(AGES.size, 0.05),
        a2=np.zeros(AGES.size), b2=np.full(AGES.size, 0.05),
        mu_k=-0.4, v_z=0.09, mu_y1=2.0, v_y1=0.5, mu_y2=2.0, v_y2=0.5,
        mu_dk=0.1, phi_dk=0.3, v_zdk=0.04,
        jump_joint_pmf=np.array([1.0, 0.0, 0.0, 0.0]),
        k0_1=0.5, delta0=-0.2)
    k1, k2 = simulate_zhou(p, 30, child_stream(4, 4))

    # stripped jump-free oracle replicating the documented draw order
    rng = child_stream(4, 4)
    kh1, delta = 0.5, -0.2
    o1, o2 = [], []
    for _ in range(30):
        z_k = rng.standard_normal()
        z_d = rng.standard_normal()
        rng.random()                 # state uniform (always no-jump)
        rng.standard_normal()        # severity 1 draw
        rng.standard_normal()        # severity 2 draw
        kh1 = kh1 + p.mu_k + np.sqrt(p.v_z) * z_k
        delta = p.mu_dk + p.phi_dk * delta + np.sqrt(p.v_zdk) * z_d
        o1.append(kh1)
        o2.append(kh1 - delta)
    assert np.max(np.abs(k1 - np.array(o1))) <= 1e-12
    assert np.max(np.abs(k2 - np.array(o2))) <= 1e-12


def test_zhou_export_import_roundtrip(tmp_path):
    ref, book = _two_population_world(3)
    params = fit_zhou(ref, book)
    from longbasis.altmodels import export_zhou
    path = tmp_path / "zhou.csv"
    export_zhou(path, params)
    loaded = import_zhou(path)
    assert np.array_equal(loaded.a1, params.a1)
    assert np.array_equal(loaded.jump_joint_pmf, params.jump_joint_pmf)
    assert loaded.mu_k == params.mu_k


def test_lc_cohorts_zero_difference_book():
    rng = np.random.default_rng(8)
    a1 = -4.0 + 0.08 * (AGES - 60)
    b_raw = np.exp(-0.02 * (AGES - 60))
    b1 = b_raw / b_raw.sum()
    k1 = np.linspace(4, -4, YEARS.size)
    k1 = k1 - k1.mean()
    m1 = np.exp(a1[:, None] + np.outer(b1, k1))
    e = np.full(m1.shape, 5e5)
    ref = MortalityPanel(PopulationTag.REFERENCE, AGES, YEARS, m1 * e, e)
    book = MortalityPanel(PopulationTag.BOOK, AGES, YEARS, m1 * e, e)
    fit = fit_lc_cohorts(ref, book)
    assert np.max(np.abs(fit.book.a)) <= 1e-5
    assert np.max(np.abs(fit.book.k)) <= 1e-4
    assert abs(fit.b.sum() - 1.0) <= 1e-10
    assert abs(fit.k.sum()) <= 1e-8 * max(1.0, np.abs(fit.k).max())
    assert abs(fit.gamma.sum()) <= 1e-8
    assert abs((fit.cohorts.astype(float) * fit.gamma).sum()) <= 1e-6


def test_lc_cohorts_book_level_recovery():
    rng = np.random.default_rng(9)
    a1 = -4.0 + 0.08 * (AGES - 60)
    b_raw = np.exp(-0.02 * (AGES - 60))
    b1 = b_raw / b_raw.sum()
    k1 = np.cumsum(-0.3 + 0.2 * rng.standard_normal(YEARS.size))
    k1 = k1 - k1.mean()
    m1 = np.exp(a1[:, None] + np.outer(b1, k1))
    a_b = -0.35 + 0.005 * (AGES - 60)
    m2 = m1 * np.exp(a_b[:, None])
    e = np.full(m1.shape, 1e6)
    ref = MortalityPanel(PopulationTag.REFERENCE, AGES, YEARS,
                         rng.poisson(m1 * e).astype(float), e)
    book = MortalityPanel(PopulationTag.BOOK, AGES, YEARS,
                          rng.poisson(m2 * e).astype(float), e)
    fit = fit_lc_cohorts(ref, book)
    assert np.max(np.abs(fit.book.a - a_b)) <= 0.01


def test_cohort_book_fixture_is_loadable_into_fit_shape():
    raw = paramio.read_params(FIXTURE_DIR / "cohort_model_book_a.csv")
    ages = np.array(sorted(raw["a"].keys()))
    a = paramio.vector(raw, "a", ages)
    assert a.shape == (30,)
    assert a[0] == -0.5431
