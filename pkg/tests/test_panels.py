from __future__ import annotations

import csv
import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from longbasis.errors import (
    DomainError,
    EmptyAgeIntersection,
    MalformedRow,
    MissingCell,
    NonPositiveExposure,
    ZeroRateCellWarning,
)
from longbasis.panels import (
    MortalityPanel,
    PopulationTag,
    RateKind,
    RateSurface,
    align_panels,
    central_rates,
    load_panel,
    m_from_q,
    q_from_m,
)

from conftest import DATA_DIR, make_panel, panel_csv_bytes


def test_load_single_cell():
    src = panel_csv_bytes(["reference,65,2000,10,1000"])
    panel = load_panel(src, PopulationTag.REFERENCE)
    assert panel.shape == (1, 1)
    assert central_rates(panel).values[0, 0] == pytest.approx(0.01, abs=0)


def test_load_zero_exposure_rejected():
    src = panel_csv_bytes(["reference,65,2000,10,0"])
    with pytest.raises(NonPositiveExposure):
        load_panel(src, PopulationTag.REFERENCE)


def test_load_malformed_row_carries_line_number():
    src = panel_csv_bytes(["reference,65,2000,10,1000",
                           "reference,66,not_a_number,3,500"])
    with pytest.raises(MalformedRow) as err:
        load_panel(src, PopulationTag.REFERENCE)
    assert err.value.line_number == 3


def test_load_grid_hole_rejected():
    src = panel_csv_bytes([
        "reference,65,2000,10,1000", "reference,65,2001,11,1000",
        "reference,66,2000,12,1000",
    ])
    with pytest.raises(MissingCell):
        load_panel(src, PopulationTag.REFERENCE)


def test_load_filters_drop_rows():
    rows = [f"reference,{age},{year},{age + year % 7},1000"
            for age in (64, 65, 66, 67) for year in (1999, 2000, 2001)]
    src = panel_csv_bytes(rows)
    panel = load_panel(src, PopulationTag.REFERENCE,
                       age_filter=range(65, 67), year_filter=range(2000, 2002))
    assert list(panel.ages) == [65, 66]
    assert list(panel.years) == [2000, 2001]


def test_load_bundled_reference_shape():
    panel = load_panel(DATA_DIR / "synthetic_reference.csv",
                       PopulationTag.REFERENCE,
                       age_filter=range(60, 90), year_filter=range(1961, 2017))
    assert panel.shape == (30, 56)


def test_central_rates_match_independent_parse():
    # oracle: line-by-line parse of the raw file, no panel machinery
    path = DATA_DIR / "synthetic_reference.csv"
    panel = load_panel(path, PopulationTag.REFERENCE)
    surface = central_rates(panel)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            if row["population"] != "reference":
                continue
            i = panel.age_index(int(row["age"]))
            j = panel.year_index(int(row["year"]))
            expected = float(row["deaths"]) / float(row["exposure"])
            assert abs(surface.values[i, j] - expected) <= 1e-12


def test_zero_death_cell_warns_and_floors():
    deaths = np.array([[0.0, 5.0]])
    exposures = np.array([[100.0, 100.0]])
    panel = MortalityPanel(PopulationTag.REFERENCE, [60], [2000, 2001],
                           deaths, exposures)
    with pytest.warns(ZeroRateCellWarning):
        plain = central_rates(panel)
    assert plain.values[0, 0] == 0.0
    with pytest.warns(ZeroRateCellWarning):
        floored = central_rates(panel, floor_rate=1e-10)
    assert floored.values[0, 0] == 1e-10


def test_q_m_trivial_values():
    m = RateSurface([60], [2000], [[0.0]], RateKind.CENTRAL)
    assert q_from_m(m).values[0, 0] == 0.0
    q = RateSurface([60], [2000], [[0.5]], RateKind.PROBABILITY)
    assert m_from_q(q).values[0, 0] == pytest.approx(np.log(2.0), abs=1e-12)


def test_m_from_q_rejects_q_of_one():
    with pytest.raises(DomainError):
        RateSurface([60], [2000], [[1.0]], RateKind.PROBABILITY)


@given(st.lists(st.floats(min_value=1e-6, max_value=5.0), min_size=1,
                max_size=8))
def test_q_m_roundtrip(values):
    m = RateSurface([60], list(range(2000, 2000 + len(values))),
                    [values], RateKind.CENTRAL)
    back = m_from_q(q_from_m(m))
    assert np.max(np.abs(back.values - m.values)) <= 1e-12


def test_align_restricts_to_common_ages_and_keeps_years():
    ref = make_panel(ages=np.arange(60, 90), years=np.arange(1961, 2017),
                     seed=1)
    book = make_panel(PopulationTag.BOOK, ages=np.arange(65, 85),
                      years=np.arange(1961, 2006), seed=2)
    pair = align_panels(ref, book)
    assert list(pair.reference.ages) == list(range(65, 85))
    assert list(pair.book.ages) == list(range(65, 85))
    assert pair.reference.years[-1] == 2016
    assert pair.book.years[-1] == 2005
    assert pair.overlap_years[0] == 1961 and pair.overlap_years[-1] == 2005


def test_align_idempotent():
    ref = make_panel(seed=3)
    book = make_panel(PopulationTag.BOOK, seed=4)
    first = align_panels(ref, book)
    second = align_panels(first.reference, first.book)
    assert np.array_equal(first.reference.deaths, second.reference.deaths)
    assert np.array_equal(first.book.exposures, second.book.exposures)
    assert np.array_equal(first.overlap_years, second.overlap_years)


def test_align_disjoint_ages():
    ref = make_panel(ages=np.arange(60, 70), seed=5)
    book = make_panel(PopulationTag.BOOK, ages=np.arange(80, 90), seed=6)
    with pytest.raises(EmptyAgeIntersection):
        align_panels(ref, book)


def test_panel_rejects_non_contiguous_years():
    with pytest.raises(MissingCell):
        MortalityPanel(PopulationTag.REFERENCE, [60], [2000, 2002],
                       [[1.0, 1.0]], [[10.0, 10.0]])
