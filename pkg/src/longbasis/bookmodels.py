"""Relative book-population models fitted conditional on the reference fit.

Four difference structures on top of the fitted reference surface:

    rel_lc:  log m_B - log m_R = a_x + b_x k_t
    cae:     log m_B - log m_R = a_x + b_ref_x k_t
    apc:     log m_B - log m_R = a_x + k_t + gamma_{t-x}
    cbd:     logit q_B - logit q_R = kappa1_t + (x - xbar) kappa2_t

All are estimated by Poisson maximum likelihood on the book's death counts
over the common ages and overlap years, selected by BIC, and given AR(1)
dynamics on the book period index.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import expit, gammaln

from .errors import (
    DegenerateB,
    DegenerateSeries,
    DomainError,
    EmptyYearOverlap,
    NonConvergence,
)
from .leecarter import LCParams
from .panels import MortalityPanel, RateKind, RateSurface
from . import paramio


class BookFamily(str, Enum):
    REL_LC = "rel_lc"
    CAE = "cae"
    APC = "apc"
    CBD = "cbd"


@dataclass(frozen=True)
class BookModelFit:
    """Fitted difference parameters for one family, plus fit quality."""

    family: BookFamily
    ages: np.ndarray
    years: np.ndarray                       # overlap years used in the fit
    a: Optional[np.ndarray] = None          # level difference (not CBD)
    b: Optional[np.ndarray] = None          # rel_lc sensitivity
    k: Optional[np.ndarray] = None          # rel_lc / cae / apc period index
    b_ref: Optional[np.ndarray] = None      # cae: borrowed reference sensitivity
    gamma: Optional[np.ndarray] = None      # apc cohort effects, one per cohort
    cohorts: Optional[np.ndarray] = None    # apc cohort labels t - x
    kappa1: Optional[np.ndarray] = None     # cbd level index
    kappa2: Optional[np.ndarray] = None     # cbd slope index
    xbar: Optional[float] = None            # cbd age centering
    loglik: float = np.nan
    n_params: int = 0
    n_obs: int = 0
    bic: float = np.nan
    iterations: int = 0

    def gamma_for(self, cohort: int) -> float:
        """Cohort effect with zero extrapolation outside the fitted range."""
        if self.family != BookFamily.APC:
            return 0.0
        i = np.searchsorted(self.cohorts, cohort)
        if i < self.cohorts.size and int(self.cohorts[i]) == int(cohort):
            return float(self.gamma[i])
        return 0.0


@dataclass(frozen=True)
class AR1Params:
    """Conditional-least-squares AR(1): x_t = psi0 + psi1 x_{t-1} + xi_t."""

    psi0: float
    psi1: float
    innovation_sd: float
    stationary: bool

    def __post_init__(self):
        if self.innovation_sd < 0:
            raise DomainError("innovation_sd must be >= 0")

    @property
    def long_run_mean(self) -> float:
        if not self.stationary:
            raise DomainError("long-run mean undefined for |psi1| >= 1")
        return self.psi0 / (1.0 - self.psi1)


def _overlap_grid(ref_rates: RateSurface, book_panel: MortalityPanel):
    """Common ages and overlap years; returns index arrays into both grids."""
    if not np.all(np.isin(book_panel.ages, ref_rates.ages)):
        raise DomainError("book ages must be covered by the reference surface")
    years = np.intersect1d(ref_rates.years, book_panel.years)
    if years.size == 0:
        raise EmptyYearOverlap("no overlap years between reference and book")
    ages = book_panel.ages
    ref_a = np.searchsorted(ref_rates.ages, ages)
    ref_y = np.searchsorted(ref_rates.years, years)
    book_y = np.searchsorted(book_panel.years, years)
    return ages, years, ref_a, ref_y, book_y


def _poisson_loglik(d, e, log_m):
    mu = e * np.exp(log_m)
    return float(np.sum(d * (np.log(e) + log_m) - mu - gammaln(d + 1.0)))


def _cohort_groups(ages: np.ndarray, years: np.ndarray,
                   min_cells: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Cohort labels plus compact group ids; sparse edge cohorts are merged
    into the nearest fully observed cohort."""
    coh = years[None, :] - ages[:, None]
    labels, counts = np.unique(coh, return_counts=True)
    full = counts >= min_cells
    group = np.arange(labels.size)
    if not full.any():
        group[:] = 0
    else:
        first_full = int(np.argmax(full))
        last_full = labels.size - 1 - int(np.argmax(full[::-1]))
        group[:first_full] = first_full
        group[last_full:] = last_full
    _, compact = np.unique(group, return_inverse=True)
    return labels, compact


def fit_book(family: Union[BookFamily, str], ref_params: LCParams,
             book_panel: MortalityPanel,
             ref_rates: Optional[RateSurface] = None,
             max_iter: int = 2000, rel_tol: float = 1e-11) -> BookModelFit:
    """Poisson MLE of the family's difference parameters.

    The reference surface defaults to the fitted rates of ``ref_params``;
    ``ref_rates`` overrides it (it must then be a central-rate surface
    covering the book's ages).
    """
    family = BookFamily(family)
    if ref_rates is None:
        ref_rates = RateSurface(ref_params.ages, ref_params.years,
                                ref_params.rates(), RateKind.CENTRAL)
    elif ref_rates.kind != RateKind.CENTRAL:
        raise DomainError("ref_rates must be central rates")
    ages, years, ref_a, ref_y, book_y = _overlap_grid(ref_rates, book_panel)
    offset = np.log(ref_rates.values[np.ix_(ref_a, ref_y)])
    d = book_panel.deaths[:, book_y]
    e = book_panel.exposures[:, book_y]
    n_obs = d.size

    if family == BookFamily.CBD:
        return _fit_cbd(ages, years, offset, d, e, n_obs, max_iter, rel_tol)

    A, Y = offset.shape
    a = (np.log(np.maximum(d / e, 1e-10)) - offset).mean(axis=1)
    k = np.zeros(Y)
    b = np.full(A, 1.0 / A)
    b_ref = None
    if family == BookFamily.CAE:
        b_ref = ref_params.b[np.searchsorted(ref_params.ages, ages)].copy()
    if family == BookFamily.APC:
        return _fit_apc(ages, years, offset, d, e, n_obs, max_iter, rel_tol)

    def log_m_now():
        diff = a[:, None] + np.zeros((A, Y))
        if family == BookFamily.REL_LC:
            diff = diff + np.outer(b, k)
        else:
            diff = diff + np.outer(b_ref, k)
        return offset + diff

    ll_prev = _poisson_loglik(d, e, log_m_now())
    iterations = 0
    for iterations in range(1, max_iter + 1):
        mu = e * np.exp(log_m_now())
        a = a + np.sum(d - mu, axis=1) / np.sum(mu, axis=1)

        mu = e * np.exp(log_m_now())
        if family == BookFamily.REL_LC:
            den = np.sum(mu * (b ** 2)[:, None], axis=0)
            if np.all(den > 1e-12):
                k = k + np.sum((d - mu) * b[:, None], axis=0) / den
        else:
            den = np.sum(mu * (b_ref ** 2)[:, None], axis=0)
            k = k + np.sum((d - mu) * b_ref[:, None], axis=0) / den

        if family == BookFamily.REL_LC:
            mu = e * np.exp(log_m_now())
            den = np.sum(mu * (k ** 2)[None, :], axis=1)
            if np.all(den > 1e-12):
                b = b + np.sum((d - mu) * k[None, :], axis=1) / den

        ll = _poisson_loglik(d, e, log_m_now())
        if not np.isfinite(ll):
            raise NonConvergence(f"{family.value} book fit diverged")
        if abs(ll - ll_prev) <= rel_tol * (abs(ll_prev) + 1.0):
            ll_prev = ll
            break
        ll_prev = ll
    else:
        raise NonConvergence(
            f"{family.value} book fit: no convergence in {max_iter} iterations"
        )

    # identifiability gauges; each leaves the fitted surface unchanged
    if family == BookFamily.REL_LC:
        if np.max(np.abs(k - k.mean())) < 1e-10:
            # book == reference up to levels: k (and with it b) is undetermined
            a = a + b * k.mean()
            k = np.zeros(Y)
            b = np.full(A, 1.0 / A)
        else:
            s = b.sum()
            if abs(s) < 1e-12:
                raise DegenerateB("sum(b) == 0 in rel_lc book fit")
            a = a + b * k.mean()
            k = (k - k.mean()) * s
            b = b / s
        n_params = 2 * A + Y - 2
    else:
        a = a + b_ref * k.mean()
        k = k - k.mean()
        n_params = A + Y - 1

    final_ll = _poisson_loglik(d, e, log_m_now())
    return BookModelFit(
        family=family, ages=ages, years=years,
        a=a,
        b=b if family == BookFamily.REL_LC else None,
        k=k,
        b_ref=b_ref,
        loglik=final_ll, n_params=n_params, n_obs=n_obs,
        bic=bic_value(final_ll, n_params, n_obs), iterations=iterations,
    )


def _fit_apc(ages, years, offset, d, e, n_obs, max_iter, rel_tol):
    """Full Newton on the stacked (a, k, gamma-group) vector.

    Coordinate sweeps crawl along the near-flat ridge created by the
    age/period/cohort collinearity, so the joint system is solved directly;
    a tiny ridge neutralizes the three-dimensional gauge null space and the
    exact gauge is restored after convergence.
    """
    A, Y = offset.shape
    labels, compact = _cohort_groups(ages, years)
    G = int(compact.max()) + 1
    coh_pos = (years[None, :] - ages[:, None] - labels[0]).astype(int)
    cell_group = compact[coh_pos]

    a = (np.log(np.maximum(d / e, 1e-10)) - offset).mean(axis=1)
    k = np.zeros(Y)
    gamma_g = np.zeros(G)

    onehot_g = np.zeros((A * Y, G))
    onehot_g[np.arange(A * Y), cell_group.ravel()] = 1.0

    def log_m_now(a, k, gamma_g):
        return offset + a[:, None] + k[None, :] + gamma_g[cell_group]

    ll_prev = _poisson_loglik(d, e, log_m_now(a, k, gamma_g))
    iterations = 0
    for iterations in range(1, max_iter + 1):
        mu = e * np.exp(log_m_now(a, k, gamma_g))
        resid = d - mu
        grad = np.concatenate([
            resid.sum(axis=1), resid.sum(axis=0),
            onehot_g.T @ resid.ravel(),
        ])
        n_p = A + Y + G
        hess = np.zeros((n_p, n_p))
        hess[:A, :A] = np.diag(mu.sum(axis=1))
        hess[A:A + Y, A:A + Y] = np.diag(mu.sum(axis=0))
        hess[A + Y:, A + Y:] = np.diag(onehot_g.T @ mu.ravel())
        hess[:A, A:A + Y] = mu
        hess[A:A + Y, :A] = mu.T
        h_ag = (mu.ravel()[:, None] * onehot_g).reshape(A, Y, G).sum(axis=1)
        hess[:A, A + Y:] = h_ag
        hess[A + Y:, :A] = h_ag.T
        h_kg = (mu.ravel()[:, None] * onehot_g).reshape(A, Y, G).sum(axis=0)
        hess[A:A + Y, A + Y:] = h_kg
        hess[A + Y:, A:A + Y] = h_kg.T
        ridge = 1e-9 * np.trace(hess) / n_p
        step = np.linalg.solve(hess + ridge * np.eye(n_p), grad)

        scale = 1.0
        for _ in range(40):
            a_n = a + scale * step[:A]
            k_n = k + scale * step[A:A + Y]
            g_n = gamma_g + scale * step[A + Y:]
            ll = _poisson_loglik(d, e, log_m_now(a_n, k_n, g_n))
            if np.isfinite(ll) and ll >= ll_prev - 1e-12:
                a, k, gamma_g = a_n, k_n, g_n
                break
            scale *= 0.5
        else:
            raise NonConvergence("apc book fit: Newton step failed")
        if abs(ll - ll_prev) <= rel_tol * (abs(ll_prev) + 1.0):
            ll_prev = ll
            break
        ll_prev = ll
    else:
        raise NonConvergence(
            f"apc book fit: no convergence in {max_iter} iterations"
        )

    # expand groups to one gamma per cohort, then remove level and trend
    # (absorbed exactly by a and k), and finally center k
    gamma = gamma_g[compact]
    c = labels.astype(float)
    g1 = float(np.sum((c - c.mean()) * gamma) / np.sum((c - c.mean()) ** 2))
    g0 = float(gamma.mean() - g1 * c.mean())
    gamma = gamma - g0 - g1 * c
    a = a + g0 - g1 * ages.astype(float)
    k = k + g1 * years.astype(float)
    a = a + k.mean()
    k = k - k.mean()
    n_params = A + Y + G - 3

    final_diff = a[:, None] + k[None, :] \
        + gamma[np.searchsorted(labels, years[None, :] - ages[:, None])]
    final_ll = _poisson_loglik(d, e, offset + final_diff)
    return BookModelFit(
        family=BookFamily.APC, ages=ages, years=years,
        a=a, k=k, gamma=gamma, cohorts=labels,
        loglik=final_ll, n_params=n_params, n_obs=n_obs,
        bic=bic_value(final_ll, n_params, n_obs), iterations=iterations,
    )


def _fit_cbd(ages, years, offset_log_m, d, e, n_obs, max_iter, rel_tol):
    """Per-year Newton on (kappa1, kappa2); the difference acts on logit q.

    With z = logit q_ref + kappa1 + (x - xbar) kappa2 the book central rate
    is m = softplus(z), so q < 1 holds throughout; steps are halved whenever
    a year's likelihood does not improve.
    """
    xbar = float(np.mean(ages))
    xc = ages.astype(float) - xbar
    q_ref = -np.expm1(-np.exp(offset_log_m))
    z_ref = np.log(q_ref) - np.log1p(-q_ref)
    kappa1 = np.zeros(years.size)
    kappa2 = np.zeros(years.size)

    def year_loglik(z_col, d_col, e_col):
        m = np.logaddexp(0.0, z_col)  # softplus
        return float(np.sum(d_col * np.log(m) - e_col * m))

    total_prev = -np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        total = 0.0
        for j in range(years.size):
            z = z_ref[:, j] + kappa1[j] + xc * kappa2[j]
            d_col, e_col = d[:, j], e[:, j]
            m = np.logaddexp(0.0, z)
            q = expit(z)
            w = d_col / m - e_col
            g = np.array([np.sum(w * q), np.sum(w * q * xc)])
            dwdz = -d_col * q ** 2 / m ** 2 + w * q * (1.0 - q)
            h11 = np.sum(dwdz)
            h12 = np.sum(dwdz * xc)
            h22 = np.sum(dwdz * xc ** 2)
            hess = np.array([[h11, h12], [h12, h22]])
            try:
                step = np.linalg.solve(hess, -g)
            except np.linalg.LinAlgError:
                step = g * 0.0
            ll0 = year_loglik(z, d_col, e_col)
            scale = 1.0
            for _ in range(30):
                z_new = z_ref[:, j] + (kappa1[j] + scale * step[0]) \
                    + xc * (kappa2[j] + scale * step[1])
                ll_new = year_loglik(z_new, d_col, e_col)
                if np.isfinite(ll_new) and ll_new >= ll0 - 1e-12:
                    kappa1[j] += scale * step[0]
                    kappa2[j] += scale * step[1]
                    ll0 = ll_new
                    break
                scale *= 0.5
            total += ll0
        if abs(total - total_prev) <= rel_tol * (abs(total) + 1.0):
            total_prev = total
            break
        total_prev = total
    else:
        raise NonConvergence(f"cbd book fit: no convergence in {max_iter} iterations")

    z = z_ref + kappa1[None, :] + np.outer(xc, kappa2)
    log_m = np.log(np.logaddexp(0.0, z))
    ll = _poisson_loglik(d, e, log_m)
    n_params = 2 * years.size
    return BookModelFit(
        family=BookFamily.CBD, ages=ages, years=years,
        kappa1=kappa1, kappa2=kappa2, xbar=xbar,
        loglik=ll, n_params=n_params, n_obs=n_obs,
        bic=bic_value(ll, n_params, n_obs), iterations=iterations,
    )


def bic_value(loglik: float, n_params: int, n_obs: int) -> float:
    """BIC = -2 loglik + n_params * ln(n_obs); lower is better."""
    if n_obs < 0 or n_params < 0:
        raise DomainError("n_params and n_obs must be >= 0")
    penalty = 0.0 if n_params == 0 else n_params * float(np.log(n_obs))
    return -2.0 * loglik + penalty


def bic(fit: BookModelFit) -> float:
    return bic_value(fit.loglik, fit.n_params, fit.n_obs)


_FAMILY_ORDER = [BookFamily.REL_LC, BookFamily.CAE, BookFamily.APC, BookFamily.CBD]


def select_model(fits: Sequence[BookModelFit]) -> BookModelFit:
    """Lowest BIC wins; ties break to fewer parameters, then family order."""
    fits = list(fits)
    if not fits:
        raise DomainError("select_model needs a non-empty list of fits")
    return min(fits, key=lambda f: (f.bic, f.n_params, _FAMILY_ORDER.index(f.family)))


def fit_ar1(series: Sequence[float]) -> AR1Params:
    """Conditional least squares for x_t = psi0 + psi1 x_{t-1} + xi_t."""
    x = np.asarray(series, dtype=float)
    if x.size < 4:
        raise DegenerateSeries("AR(1) fit needs at least 4 observations")
    lag, cur = x[:-1], x[1:]
    var_lag = np.sum((lag - lag.mean()) ** 2)
    if var_lag < 1e-300 * max(1.0, np.max(np.abs(x)) ** 2) or np.ptp(x) == 0.0:
        raise DegenerateSeries("constant series cannot identify psi1")
    psi1 = float(np.sum((lag - lag.mean()) * (cur - cur.mean())) / var_lag)
    psi0 = float(cur.mean() - psi1 * lag.mean())
    resid = cur - psi0 - psi1 * lag
    n = cur.size
    sd = float(np.sqrt(np.sum(resid ** 2) / max(n - 2, 1)))
    return AR1Params(psi0=psi0, psi1=psi1, innovation_sd=sd,
                     stationary=bool(abs(psi1) < 1.0))


def project_book_k(p: AR1Params, k_last: float, horizon: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Iterate the AR(1) recursion with Gaussian innovations."""
    if horizon < 1:
        raise DomainError("horizon must be >= 1")
    shocks = p.innovation_sd * rng.standard_normal(horizon)
    out = np.empty(horizon)
    prev = float(k_last)
    for i in range(horizon):
        prev = p.psi0 + p.psi1 * prev + shocks[i]
        out[i] = prev
    return out


def book_rates(fit: BookModelFit, ref_rates_scenario: RateSurface,
               k_path) -> RateSurface:
    """Book central-rate surface along a simulated book index path.

    ``ref_rates_scenario`` is the reference m-surface over future years;
    ``k_path`` is the book index path (for cbd: array of shape (2, horizon)
    stacking kappa1 and kappa2).  Cohorts beyond the fitted range enter with
    a zero effect.
    """
    if ref_rates_scenario.kind != RateKind.CENTRAL:
        raise DomainError("scenario surface must be central rates")
    if not np.array_equal(ref_rates_scenario.ages, fit.ages):
        raise DomainError("scenario ages must match the fitted book ages")
    years = ref_rates_scenario.years
    m_ref = ref_rates_scenario.values
    k_path = np.asarray(k_path, dtype=float)

    if fit.family == BookFamily.CBD:
        if k_path.shape != (2, years.size):
            raise DomainError("cbd needs a (2, horizon) kappa path")
        q_ref = -np.expm1(-m_ref)
        z = np.log(q_ref) - np.log1p(-q_ref) \
            + k_path[0][None, :] \
            + np.outer(fit.ages.astype(float) - fit.xbar, k_path[1])
        m = np.logaddexp(0.0, z)
        return RateSurface(fit.ages, years, m, RateKind.CENTRAL)

    if k_path.shape != years.shape:
        raise DomainError("k path length must match the scenario years")
    if fit.family == BookFamily.REL_LC:
        diff = fit.a[:, None] + np.outer(fit.b, k_path)
    elif fit.family == BookFamily.CAE:
        diff = fit.a[:, None] + np.outer(fit.b_ref, k_path)
    else:
        gamma_add = np.array([
            [fit.gamma_for(int(yy) - int(xx)) for yy in years]
            for xx in fit.ages
        ])
        diff = fit.a[:, None] + k_path[None, :] + gamma_add
    return RateSurface(fit.ages, years, m_ref * np.exp(diff), RateKind.CENTRAL)


_FAMILY_CODE = {f: i for i, f in enumerate(_FAMILY_ORDER)}


def export_fit(path, fit: BookModelFit) -> None:
    payload: dict = {"family_code": float(_FAMILY_CODE[fit.family]),
                     "loglik": fit.loglik, "n_params": float(fit.n_params),
                     "n_obs": float(fit.n_obs), "bic": fit.bic}
    keys: dict = {}
    for name in ("a", "b", "k", "b_ref", "gamma", "kappa1", "kappa2"):
        value = getattr(fit, name)
        if value is not None:
            payload[name] = value
            keys[name] = {
                "a": fit.ages, "b": fit.ages, "b_ref": fit.ages,
                "k": fit.years, "kappa1": fit.years, "kappa2": fit.years,
                "gamma": fit.cohorts,
            }[name]
    if fit.xbar is not None:
        payload["xbar"] = fit.xbar
    if fit.family == BookFamily.CBD:
        payload["age_lo"] = float(fit.ages[0])
        payload["age_hi"] = float(fit.ages[-1])
    paramio.write_params(path, payload, index_keys=keys)


def import_fit(path) -> BookModelFit:
    raw = paramio.read_params(path)
    family = _FAMILY_ORDER[int(raw["family_code"])]
    def vec(name, keys):
        return paramio.vector(raw, name, keys) if name in raw else None
    if family == BookFamily.CBD:
        years = np.array(sorted(raw["kappa1"].keys()), dtype=int)
        ages = np.arange(int(raw["age_lo"]), int(raw["age_hi"]) + 1)
    else:
        years = np.array(sorted(raw["k"].keys()), dtype=int)
        ages = np.array(sorted(raw["a"].keys()), dtype=int)
    cohorts = np.array(sorted(raw["gamma"].keys()), dtype=int) \
        if "gamma" in raw else None
    return BookModelFit(
        family=family, ages=ages, years=years,
        a=vec("a", ages), b=vec("b", ages), k=vec("k", years),
        b_ref=vec("b_ref", ages),
        gamma=vec("gamma", cohorts) if cohorts is not None else None,
        cohorts=cohorts,
        kappa1=vec("kappa1", years), kappa2=vec("kappa2", years),
        xbar=float(raw["xbar"]) if "xbar" in raw else None,
        loglik=float(raw["loglik"]), n_params=int(raw["n_params"]),
        n_obs=int(raw["n_obs"]), bic=float(raw["bic"]),
    )
