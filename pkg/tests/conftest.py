from __future__ import annotations

import io
from pathlib import Path

import numpy as np
import pytest

from longbasis import paramio
from longbasis.panels import MortalityPanel, PopulationTag, load_panel

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
FIXTURE_DIR = DATA_DIR / "fixtures"


@pytest.fixture(scope="session")
def ew_fixture() -> dict:
    return paramio.read_params(FIXTURE_DIR / "ew_reference_calibration.csv")


@pytest.fixture(scope="session")
def ref_panel() -> MortalityPanel:
    return load_panel(DATA_DIR / "synthetic_reference.csv",
                      PopulationTag.REFERENCE)


@pytest.fixture(scope="session")
def book_panel() -> MortalityPanel:
    return load_panel(DATA_DIR / "synthetic_book.csv", PopulationTag.BOOK)


def make_panel(tag=PopulationTag.REFERENCE, ages=None, years=None,
               deaths=None, exposures=None, seed=0, exposure_level=1e5):
    """Small synthetic panel with an exact Lee-Carter surface."""
    ages = np.arange(60, 70) if ages is None else np.asarray(ages)
    years = np.arange(2000, 2010) if years is None else np.asarray(years)
    rng = np.random.default_rng(seed)
    if deaths is None:
        a = -4.0 + 0.08 * (ages - ages[0])
        b = np.full(ages.size, 1.0 / ages.size)
        k = np.linspace(2.0, -2.0, years.size)
        k = k - k.mean()
        m = np.exp(a[:, None] + np.outer(b, k))
        exposures = np.full((ages.size, years.size), float(exposure_level)) \
            if exposures is None else exposures
        deaths = rng.poisson(m * exposures).astype(float)
        deaths = np.maximum(deaths, 1.0)
    return MortalityPanel(tag, ages, years, deaths, exposures)


def panel_csv_bytes(rows, header="population,age,year,deaths,exposure"):
    text = header + "\n" + "\n".join(rows) + "\n"
    return io.StringIO(text)
