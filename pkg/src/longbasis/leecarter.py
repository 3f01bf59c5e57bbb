"""Single-population Lee-Carter fit: log m(x,t) = a_x + b_x * k_t.

Identifiability: sum(b) = 1 and sum(k) = 0.  Two estimation routes are
provided: the classical SVD fit on log rates (also used as initialization
and cross-check) and a Poisson maximum-likelihood fit by alternating Newton
updates on a, b, k.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .errors import DegenerateB, DegenerateFit, NonConvergence, ZeroRateCell
from .panels import MortalityPanel, RateKind, RateSurface
from . import paramio


class FitMethod(str, Enum):
    SVD = "svd"
    POISSON_MLE = "poisson_mle"


@dataclass(frozen=True)
class LCParams:
    """Constrained Lee-Carter parameters for one population."""

    ages: np.ndarray
    years: np.ndarray
    a: np.ndarray
    b: np.ndarray
    k: np.ndarray

    def __post_init__(self):
        for name in ("ages", "years", "a", "b", "k"):
            arr = np.asarray(getattr(self, name), dtype=float if name not in ("ages", "years") else int)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.a.shape != self.ages.shape or self.b.shape != self.ages.shape:
            raise DegenerateFit("a and b must have one entry per age")
        if self.k.shape != self.years.shape:
            raise DegenerateFit("k must have one entry per year")
        if abs(self.b.sum() - 1.0) > 1e-10:
            raise DegenerateB(f"sum(b) = {self.b.sum()} != 1")
        if abs(self.k.sum()) > 1e-8 * max(1.0, np.abs(self.k).max()):
            raise DegenerateFit(f"sum(k) = {self.k.sum()} != 0")

    def log_rates(self, k: Optional[np.ndarray] = None) -> np.ndarray:
        """Fitted log m over (age, year); optionally for a supplied k path."""
        kk = self.k if k is None else np.asarray(k, dtype=float)
        return self.a[:, None] + np.outer(self.b, kk)

    def rates(self, k: Optional[np.ndarray] = None) -> np.ndarray:
        return np.exp(self.log_rates(k))


@dataclass(frozen=True)
class LCFit:
    """Fit result: constrained parameters plus diagnostics."""

    params: LCParams
    loglik: float
    deviance: float
    method: FitMethod
    iterations: int


def apply_constraints(ages, years, a, b, k) -> LCParams:
    """Normalize an unconstrained (a, b, k) triple.

    The gauge transform b -> b/S, k -> (k - mean k) * S, a -> a + b * mean(k)
    (S = sum b) leaves every fitted log rate unchanged.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    k = np.asarray(k, dtype=float)
    s = b.sum()
    if abs(s) < 1e-300:
        raise DegenerateB("sum(b) == 0; constraints undefined")
    k_mean = k.mean()
    return LCParams(
        ages=np.asarray(ages), years=np.asarray(years),
        a=a + b * k_mean,
        b=b / s,
        k=(k - k_mean) * s,
    )


def poisson_loglik(panel: MortalityPanel, log_m: np.ndarray) -> float:
    """Poisson log-likelihood of the panel's deaths at fitted log rates."""
    mu = panel.exposures * np.exp(log_m)
    d = panel.deaths
    return float(np.sum(d * (np.log(panel.exposures) + log_m) - mu - gammaln(d + 1.0)))


def poisson_deviance(panel: MortalityPanel, log_m: np.ndarray) -> float:
    """Saturated-minus-fitted deviance; zero-death cells contribute mu only."""
    mu = panel.exposures * np.exp(log_m)
    d = panel.deaths
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(d > 0, d * np.log(d / mu), 0.0)
    return float(2.0 * np.sum(term - (d - mu)))


def _svd_fit(panel: MortalityPanel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    m = panel.deaths / panel.exposures
    if np.any(m <= 0):
        raise ZeroRateCell(
            "log-rate fit needs all m > 0; floor zero-death cells first"
        )
    log_m = np.log(m)
    a = log_m.mean(axis=1)
    u, s, vt = np.linalg.svd(log_m - a[:, None], full_matrices=False)
    b = u[:, 0]
    k = s[0] * vt[0]
    # Fix the sign so that b sums positive (k flips with it).
    if b.sum() < 0:
        b, k = -b, -k
    return a, b, k


def fit_lc(panel: MortalityPanel, method: FitMethod = FitMethod.POISSON_MLE,
           max_iter: int = 500, rel_tol: float = 1e-10) -> LCFit:
    """Fit the Lee-Carter structure to one panel.

    The Poisson route maximizes sum D*log(E*exp(a+bk)) - E*exp(a+bk) - log D!
    by alternating Newton updates, started from the SVD fit.  Convergence is
    declared when the relative log-likelihood change drops below ``rel_tol``.
    """
    method = FitMethod(method)
    if panel.years.size < 2:
        raise DegenerateFit("at least two years are needed to identify k")
    a, b, k = _svd_fit(panel)
    if method == FitMethod.SVD:
        params = apply_constraints(panel.ages, panel.years, a, b, k)
        log_m = params.log_rates()
        return LCFit(params, poisson_loglik(panel, log_m),
                     poisson_deviance(panel, log_m), method, iterations=0)

    d = panel.deaths
    e = panel.exposures
    ll_prev = poisson_loglik(panel, a[:, None] + np.outer(b, k))
    iterations = 0
    for iterations in range(1, max_iter + 1):
        mu = e * np.exp(a[:, None] + np.outer(b, k))
        a = a + np.sum(d - mu, axis=1) / np.sum(mu, axis=1)

        mu = e * np.exp(a[:, None] + np.outer(b, k))
        num_k = np.sum((d - mu) * b[:, None], axis=0)
        den_k = np.sum(mu * (b ** 2)[:, None], axis=0)
        k = k + num_k / den_k
        k = k - k.mean()                      # keep the gauge from drifting

        mu = e * np.exp(a[:, None] + np.outer(b, k))
        num_b = np.sum((d - mu) * k[None, :], axis=1)
        den_b = np.sum(mu * (k ** 2)[None, :], axis=1)
        b = b + num_b / den_b

        ll = poisson_loglik(panel, a[:, None] + np.outer(b, k))
        if not np.isfinite(ll):
            raise NonConvergence("Poisson likelihood became non-finite")
        if abs(ll - ll_prev) <= rel_tol * (abs(ll_prev) + 1.0):
            ll_prev = ll
            break
        ll_prev = ll
    else:
        raise NonConvergence(
            f"Lee-Carter Poisson fit: no convergence in {max_iter} iterations"
        )

    params = apply_constraints(panel.ages, panel.years, a, b, k)
    log_m = params.log_rates()
    return LCFit(params, poisson_loglik(panel, log_m),
                 poisson_deviance(panel, log_m), method, iterations)


def rate_surface(params: LCParams) -> RateSurface:
    return RateSurface(params.ages, params.years, params.rates(), RateKind.CENTRAL)


def export_params(path, params: LCParams, extra: dict[str, float] | None = None) -> None:
    payload = {"a": params.a, "b": params.b, "k": params.k}
    keys = {"a": params.ages, "b": params.ages, "k": params.years}
    if extra:
        payload.update(extra)
    paramio.write_params(path, payload, index_keys=keys)


def import_params(path) -> LCParams:
    raw = paramio.read_params(path)
    ages = np.array(sorted(raw["a"].keys()), dtype=int)
    years = np.array(sorted(raw["k"].keys()), dtype=int)
    return LCParams(
        ages=ages, years=years,
        a=paramio.vector(raw, "a", ages),
        b=paramio.vector(raw, "b", ages),
        k=paramio.vector(raw, "k", years),
    )
