from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from longbasis.errors import DegenerateB, DegenerateFit, ZeroRateCell
from longbasis.leecarter import (
    FitMethod,
    LCParams,
    apply_constraints,
    export_params,
    fit_lc,
    import_params,
)
from longbasis.panels import MortalityPanel, PopulationTag

from conftest import make_panel


def _exact_panel(ages, years, a, b, k):
    m = np.exp(a[:, None] + np.outer(b, k))
    e = np.full(m.shape, 1e6)
    return MortalityPanel(PopulationTag.REFERENCE, ages, years, m * e, e)


def test_poisson_mle_recovers_exact_surface():
    ages = np.arange(60, 75)
    years = np.arange(1990, 2015)
    a = -4.5 + 0.1 * (ages - 60)
    b_raw = np.exp(-0.05 * (ages - 60))
    b = b_raw / b_raw.sum()
    k = np.linspace(6.0, -6.0, years.size)
    k = k - k.mean()
    panel = _exact_panel(ages, years, a, b, k)
    fit = fit_lc(panel, FitMethod.POISSON_MLE)
    assert np.max(np.abs(fit.params.a - a)) <= 1e-6
    assert np.max(np.abs(fit.params.b - b)) <= 1e-6
    assert np.max(np.abs(fit.params.k - k)) <= 1e-4
    assert fit.deviance <= 1e-8


def test_poisson_not_worse_than_svd():
    panel = make_panel(ages=np.arange(60, 80), years=np.arange(1980, 2016),
                       seed=11, exposure_level=2e4)
    svd = fit_lc(panel, FitMethod.SVD)
    mle = fit_lc(panel, FitMethod.POISSON_MLE)
    assert mle.loglik >= svd.loglik - 1e-9


def test_single_year_panel_degenerate():
    panel = make_panel(years=np.arange(2000, 2001), seed=12)
    with pytest.raises(DegenerateFit):
        fit_lc(panel)


def test_zero_rate_cell_rejected():
    deaths = np.array([[0.0, 5.0], [4.0, 6.0]])
    exposures = np.full((2, 2), 100.0)
    panel = MortalityPanel(PopulationTag.REFERENCE, [60, 61], [2000, 2001],
                           deaths, exposures)
    with pytest.raises(ZeroRateCell):
        fit_lc(panel)


def test_apply_constraints_idempotent():
    ages, years = np.arange(3), np.arange(2000, 2005)
    p = apply_constraints(ages, years, np.array([-4.0, -3.0, -2.0]),
                          np.array([0.5, 0.3, 0.2]),
                          np.array([2.0, 1.0, 0.0, -1.0, -2.0]))
    again = apply_constraints(p.ages, p.years, p.a, p.b, p.k)
    assert np.allclose(p.a, again.a, atol=1e-14)
    assert np.allclose(p.b, again.b, atol=1e-14)
    assert np.allclose(p.k, again.k, atol=1e-14)


def test_apply_constraints_gauge_invariance():
    ages, years = np.arange(4), np.arange(2000, 2006)
    a = np.array([-4.0, -3.5, -3.0, -2.5])
    b = np.array([0.4, 0.3, 0.2, 0.1])
    k = np.array([3.0, 2.0, 1.0, -1.0, -2.0, -3.0])
    p1 = apply_constraints(ages, years, a, b, k)
    p2 = apply_constraints(ages, years, a, 2.0 * b, 0.5 * k)
    assert np.allclose(p1.a, p2.a, atol=1e-12)
    assert np.allclose(p1.b, p2.b, atol=1e-12)
    assert np.allclose(p1.k, p2.k, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_apply_constraints_preserves_surface(seed):
    rng = np.random.default_rng(seed)
    n_a, n_y = 5, 7
    a = rng.normal(-3, 1, n_a)
    b = rng.normal(0.2, 0.5, n_a)
    if abs(b.sum()) < 1e-6:
        b[0] += 1.0
    k = rng.normal(0, 3, n_y)
    before = a[:, None] + np.outer(b, k)
    p = apply_constraints(np.arange(n_a), np.arange(2000, 2000 + n_y), a, b, k)
    after = p.log_rates()
    assert np.max(np.abs(before - after)) <= 1e-12
    assert abs(p.b.sum() - 1.0) <= 1e-10
    assert abs(p.k.sum()) <= 1e-10 * max(1.0, np.abs(p.k).max())


def test_apply_constraints_degenerate_b():
    with pytest.raises(DegenerateB):
        apply_constraints(np.arange(2), np.arange(2000, 2002),
                          np.zeros(2), np.array([1.0, -1.0]) * 0.0,
                          np.zeros(2))


def test_param_csv_roundtrip_bit_exact(tmp_path):
    panel = make_panel(seed=13)
    fit = fit_lc(panel)
    path = tmp_path / "params.csv"
    export_params(path, fit.params)
    loaded = import_params(path)
    assert np.array_equal(loaded.a, fit.params.a)
    assert np.array_equal(loaded.b, fit.params.b)
    assert np.array_equal(loaded.k, fit.params.k)
    assert np.array_equal(loaded.ages, fit.params.ages)
