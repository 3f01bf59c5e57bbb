"""Exception hierarchy and warning categories for the toolkit.

Every error raised by library code derives from :class:`LongbasisError` so
callers (notably the CLI) can wrap failures with a pipeline stage tag.
"""

from __future__ import annotations


class LongbasisError(Exception):
    """Base class for all toolkit errors."""


# --- data ingestion ---------------------------------------------------------

class MalformedRow(LongbasisError):
    """A CSV row failed to parse; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class MissingCell(LongbasisError):
    """The (age, year) grid has a hole after filtering."""


class NonPositiveExposure(LongbasisError):
    """An exposure cell is zero or negative."""


class EmptyAgeIntersection(LongbasisError):
    """Two panels share no common ages."""


class EmptyYearOverlap(LongbasisError):
    """Two panels share no common years."""


class DomainError(LongbasisError):
    """A value fell outside its mathematical domain (e.g. q >= 1)."""


# --- fitting ----------------------------------------------------------------

class NonConvergence(LongbasisError):
    """An iterative fit exhausted its iteration or tolerance budget."""


class ZeroRateCell(LongbasisError):
    """A model operating on log rates received a zero (or negative) rate."""


class DegenerateFit(LongbasisError):
    """The data cannot identify the requested parameters."""


class DegenerateB(LongbasisError):
    """Identifiability normalisation impossible because sum(b) == 0."""


class DegenerateSeries(LongbasisError):
    """A time series is constant or too short for the requested fit."""


class QuadratureFailure(LongbasisError):
    """Numerical integration could not reach the requested tolerance."""


# --- scenario engine / hedging ---------------------------------------------

class ScenarioRefitFailure(LongbasisError):
    """Too many bootstrap scenarios failed to refit."""


class ZeroSwapVariance(LongbasisError):
    """The swap leg has zero sample variance; no hedge weight exists."""


class ZeroUnhedgedVariance(LongbasisError):
    """The unhedged liability has zero sample variance."""


# --- CLI --------------------------------------------------------------------

class ConfigError(LongbasisError):
    """A run configuration is missing, malformed, or inconsistent."""


class PipelineError(LongbasisError):
    """Wraps a module error with the pipeline stage where it occurred."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


# --- warnings ----------------------------------------------------------------

class ZeroRateCellWarning(UserWarning):
    """A deaths cell is zero; downstream log-rate models need flooring."""


class WeakIdentificationWarning(UserWarning):
    """Jump parameters are weakly identified (near-singular curvature)."""
