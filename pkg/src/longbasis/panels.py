"""Deaths/exposures panels, rate surfaces, and alignment of two populations.

A panel is a rectangular grid of death counts and person-year exposures over
contiguous ages x contiguous calendar years.  Central rates are deaths over
exposures; one-year death probabilities relate to central rates through
m = -log(1 - q).  All containers are frozen and safe to share across threads.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import (
    DomainError,
    EmptyAgeIntersection,
    EmptyYearOverlap,
    MalformedRow,
    MissingCell,
    NonPositiveExposure,
    ZeroRateCellWarning,
)

CSV_HEADER = ["population", "age", "year", "deaths", "exposure"]

DEFAULT_FLOOR_RATE = 1e-10


class PopulationTag(str, Enum):
    REFERENCE = "reference"
    BOOK = "book"


class RateKind(str, Enum):
    CENTRAL = "m"
    PROBABILITY = "q"


def _contiguous(values: np.ndarray, what: str) -> np.ndarray:
    values = np.asarray(sorted(set(int(v) for v in values)), dtype=int)
    if values.size == 0:
        raise MissingCell(f"no {what} present")
    if values[-1] - values[0] + 1 != values.size:
        raise MissingCell(f"{what} range {values[0]}..{values[-1]} has gaps")
    return values


@dataclass(frozen=True)
class MortalityPanel:
    """Rectangular deaths/exposures grid for one population."""

    population_tag: PopulationTag
    ages: np.ndarray          # contiguous ints, shape (A,)
    years: np.ndarray         # contiguous ints, shape (Y,)
    deaths: np.ndarray        # shape (A, Y), >= 0
    exposures: np.ndarray     # shape (A, Y), > 0

    def __post_init__(self):
        ages = _contiguous(self.ages, "age")
        years = _contiguous(self.years, "year")
        deaths = np.asarray(self.deaths, dtype=float)
        exposures = np.asarray(self.exposures, dtype=float)
        shape = (ages.size, years.size)
        if deaths.shape != shape or exposures.shape != shape:
            raise MissingCell(
                f"matrix shape {deaths.shape} != (ages, years) {shape}"
            )
        if not np.all(np.isfinite(deaths)) or np.any(deaths < 0):
            raise DomainError("death counts must be finite and >= 0")
        if not np.all(np.isfinite(exposures)) or np.any(exposures <= 0):
            raise NonPositiveExposure("every exposure must be finite and > 0")
        for name, arr in (("ages", ages), ("years", years),
                          ("deaths", deaths), ("exposures", exposures)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.deaths.shape

    def age_index(self, age: int) -> int:
        return int(age) - int(self.ages[0])

    def year_index(self, year: int) -> int:
        return int(year) - int(self.years[0])

    def restrict(self, ages: Optional[range] = None,
                 years: Optional[range] = None) -> "MortalityPanel":
        """Sub-panel over the given contiguous age/year windows."""
        a_sel = np.isin(self.ages, list(ages)) if ages is not None \
            else np.ones(self.ages.size, bool)
        y_sel = np.isin(self.years, list(years)) if years is not None \
            else np.ones(self.years.size, bool)
        if not a_sel.any():
            raise EmptyAgeIntersection("age restriction leaves no ages")
        if not y_sel.any():
            raise EmptyYearOverlap("year restriction leaves no years")
        return MortalityPanel(
            population_tag=self.population_tag,
            ages=self.ages[a_sel],
            years=self.years[y_sel],
            deaths=self.deaths[np.ix_(a_sel, y_sel)],
            exposures=self.exposures[np.ix_(a_sel, y_sel)],
        )


@dataclass(frozen=True)
class RateSurface:
    """Matrix of central rates (m) or one-year death probabilities (q)."""

    ages: np.ndarray
    years: np.ndarray
    values: np.ndarray
    kind: RateKind

    def __post_init__(self):
        ages = _contiguous(self.ages, "age")
        years = _contiguous(self.years, "year")
        values = np.asarray(self.values, dtype=float)
        if values.shape != (ages.size, years.size):
            raise MissingCell("value matrix shape does not match ages/years")
        if not np.all(np.isfinite(values)):
            raise DomainError("rates must be finite")
        if self.kind == RateKind.PROBABILITY and (
                np.any(values < 0) or np.any(values >= 1)):
            # zero is admitted so m = 0 maps cleanly; q = 1 has no finite m
            raise DomainError("death probabilities must lie in [0, 1)")
        if self.kind == RateKind.CENTRAL and np.any(values < 0):
            raise DomainError("central rates must be >= 0")
        for name, arr in (("ages", ages), ("years", years), ("values", values)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class AlignedPair:
    """Reference and book panels restricted to their common age range.

    Each population keeps its own year range; ``overlap_years`` indexes the
    years present in both, which is where relative book models are fitted.
    """

    reference: MortalityPanel
    book: MortalityPanel
    overlap_years: np.ndarray = field(init=False)

    def __post_init__(self):
        if not np.array_equal(self.reference.ages, self.book.ages):
            raise EmptyAgeIntersection("aligned panels must share ages")
        overlap = np.intersect1d(self.reference.years, self.book.years)
        if overlap.size == 0:
            raise EmptyYearOverlap("panels share no calendar years")
        overlap.setflags(write=False)
        object.__setattr__(self, "overlap_years", overlap)


def load_panel(source, population_tag: PopulationTag,
               age_filter: Optional[range] = None,
               year_filter: Optional[range] = None) -> MortalityPanel:
    """Parse a panel CSV stream into a validated :class:`MortalityPanel`.

    ``source`` may be a text or byte stream, or a path.  The schema is a
    header row ``population,age,year,deaths,exposure`` followed by one row
    per (age, year) cell; rows for other populations or outside the filters
    are dropped.  The surviving grid must be complete.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return load_panel(fh, population_tag, age_filter, year_filter)
    if isinstance(source, io.RawIOBase) or (
            hasattr(source, "read") and isinstance(source.read(0), bytes)):
        source = io.TextIOWrapper(source, encoding="utf-8")

    tag = PopulationTag(population_tag)
    reader = csv.reader(source)
    cells: dict[tuple[int, int], tuple[float, float]] = {}
    header_seen = False
    for line_no, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if not header_seen:
            if [c.strip().lower() for c in row] != CSV_HEADER:
                raise MalformedRow(line_no, f"expected header {CSV_HEADER}")
            header_seen = True
            continue
        if len(row) != 5:
            raise MalformedRow(line_no, f"expected 5 fields, got {len(row)}")
        pop, age_s, year_s, d_s, e_s = (c.strip() for c in row)
        try:
            age, year = int(age_s), int(year_s)
            deaths, exposure = float(d_s), float(e_s)
        except ValueError as exc:
            raise MalformedRow(line_no, str(exc)) from None
        if pop.lower() != tag.value:
            continue
        if age_filter is not None and age not in age_filter:
            continue
        if year_filter is not None and year not in year_filter:
            continue
        if exposure <= 0:
            raise NonPositiveExposure(
                f"line {line_no}: exposure {exposure} for age {age}, year {year}"
            )
        if (age, year) in cells:
            raise MalformedRow(line_no, f"duplicate cell ({age}, {year})")
        cells[(age, year)] = (deaths, exposure)
    if not header_seen:
        raise MalformedRow(1, "empty file")
    if not cells:
        raise MissingCell(f"no rows for population '{tag.value}' after filtering")

    ages = _contiguous(np.array([a for a, _ in cells]), "age")
    years = _contiguous(np.array([y for _, y in cells]), "year")
    deaths = np.empty((ages.size, years.size))
    exposures = np.empty_like(deaths)
    for i, a in enumerate(ages):
        for j, y in enumerate(years):
            try:
                deaths[i, j], exposures[i, j] = cells[(int(a), int(y))]
            except KeyError:
                raise MissingCell(f"missing cell (age {a}, year {y})") from None
    return MortalityPanel(tag, ages, years, deaths, exposures)


def central_rates(panel: MortalityPanel,
                  floor_rate: Optional[float] = None) -> RateSurface:
    """Element-wise deaths / exposures.

    Zero-death cells yield m = 0 and trigger a :class:`ZeroRateCellWarning`;
    passing ``floor_rate`` substitutes that floor so log-rate models stay
    finite.
    """
    m = panel.deaths / panel.exposures
    if np.any(m == 0):
        n = int(np.sum(m == 0))
        warnings.warn(
            f"{n} zero-rate cell(s); log-rate models need a positive floor",
            ZeroRateCellWarning,
            stacklevel=2,
        )
        if floor_rate is not None:
            if floor_rate <= 0:
                raise DomainError("floor_rate must be > 0")
            m = np.maximum(m, floor_rate)
    return RateSurface(panel.ages, panel.years, m, RateKind.CENTRAL)


def q_from_m(surface: RateSurface) -> RateSurface:
    """q = 1 - exp(-m)."""
    if surface.kind != RateKind.CENTRAL:
        raise DomainError("q_from_m expects a central-rate surface")
    q = -np.expm1(-surface.values)
    # m = 0 maps to q = 0, outside the open interval; nudge is rejected on
    # purpose so callers floor rates first.
    return RateSurface(surface.ages, surface.years, q, RateKind.PROBABILITY)


def m_from_q(surface: RateSurface) -> RateSurface:
    """m = -log(1 - q)."""
    if surface.kind != RateKind.PROBABILITY:
        raise DomainError("m_from_q expects a probability surface")
    if np.any(surface.values >= 1):
        raise DomainError("q >= 1 has no finite central rate")
    m = -np.log1p(-surface.values)
    return RateSurface(surface.ages, surface.years, m, RateKind.CENTRAL)


def align_panels(reference: MortalityPanel, book: MortalityPanel) -> AlignedPair:
    """Restrict both panels to the common age range.

    Each panel keeps its own year range; fitting against the book uses the
    overlap years recorded on the returned pair.
    """
    common_ages = np.intersect1d(reference.ages, book.ages)
    if common_ages.size == 0:
        raise EmptyAgeIntersection(
            f"ages {reference.ages[0]}..{reference.ages[-1]} vs "
            f"{book.ages[0]}..{book.ages[-1]}"
        )
    age_range = range(int(common_ages[0]), int(common_ages[-1]) + 1)
    return AlignedPair(
        reference=reference.restrict(ages=age_range),
        book=book.restrict(ages=age_range),
    )


def write_panel_csv(path, panels: list[MortalityPanel]) -> None:
    """Serialize panels back to the ingestion CSV schema."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for panel in panels:
            for i, age in enumerate(panel.ages):
                for j, year in enumerate(panel.years):
                    writer.writerow([
                        panel.population_tag.value, int(age), int(year),
                        repr(float(panel.deaths[i, j])),
                        repr(float(panel.exposures[i, j])),
                    ])
