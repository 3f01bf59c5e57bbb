"""Drifted Brownian period index with renewal-driven exponential jumps.

The reference period index evolves as
    k_t = k_0 + (mu - sigma^2/2) t + sigma W(t) + sum_{i<=N(t)} Y_i
with N a renewal counting process and Y_i iid Exponential(eta).  One-period
increments are iid with mixture density
    f(r) = sum_n P(n) f(r | n),
where f(r|0) is normal and f(r|n) is the convolution of a Gamma(n, eta) jump
sum with that normal.  Calibration maximizes sum_i log f(r_i) over
(mu, sigma, eta, alpha, beta).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.special import gammaln, log_ndtr

from .errors import DegenerateFit, DomainError, NonConvergence, QuadratureFailure
from .errors import WeakIdentificationWarning
from .leecarter import LCParams
from .panels import RateKind, RateSurface
from .renewal import RenewalFamily, RenewalLaw, renewal_jump_probabilities
from . import paramio

_LOG_2PI = float(np.log(2.0 * np.pi))

# Composite Gauss-Legendre cell: 10 nodes per panel of half a local width
# resolves a log-concave feature to ~1e-11 relative error.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)
_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite.hermgauss(96)

# Above this jump count the Gamma density is smooth enough for Gauss-Hermite
# in the normal variable, which scales to arbitrarily large n.
_GAUSS_HERMITE_MIN_N = 7


@dataclass(frozen=True)
class JumpDiffusionParams:
    """Drift/diffusion/jump parameters of the period index."""

    mu: float
    sigma: float
    eta: float
    alpha: float
    beta: float
    k0: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise DomainError("sigma must be >= 0")
        if self.eta <= 0 or self.alpha <= 0 or self.beta <= 0:
            raise DomainError("eta, alpha, beta must be > 0")

    def law(self, family: RenewalFamily = RenewalFamily.GAMMA) -> RenewalLaw:
        return RenewalLaw(family, self.alpha, self.beta)

    @property
    def diffusion_mean(self) -> float:
        """Mean of the jump-free one-year increment: mu - sigma^2/2."""
        return self.mu - 0.5 * self.sigma ** 2


def _normal_logpdf(r, mean, sd):
    z = (np.asarray(r, dtype=float) - mean) / sd
    return -0.5 * z * z - np.log(sd) - 0.5 * _LOG_2PI


def _peak_location(c, n, eta, sigma):
    """Stationary point of (n-1)ln X - eta X - (X-c)^2/(2 sigma^2) on X > 0."""
    shift = c - eta * sigma ** 2
    if n == 1:
        return np.maximum(0.0, shift)
    disc = shift ** 2 + 4.0 * (n - 1) * sigma ** 2
    return 0.5 * (shift + np.sqrt(disc))


def conditional_increment_density(r: float, n: int, p: JumpDiffusionParams) -> float:
    """Density of a one-period increment given exactly n jumps (strict path).

    Uses adaptive Gauss-Kronrod quadrature on the jump-sum variable with the
    integration window cut where the integrand falls 16 decades below its
    peak; the log-integrand is concave so the window is exhaustive.
    """
    if n < 0:
        raise DomainError("n must be >= 0")
    if p.sigma <= 0:
        raise DomainError("density requires sigma > 0")
    m0 = p.diffusion_mean
    if n == 0:
        return float(np.exp(_normal_logpdf(r, m0, p.sigma)))
    c = float(r) - m0
    x_star = max(float(_peak_location(c, n, p.eta, p.sigma)), 1e-300)
    if n == 1:
        if c - p.eta * p.sigma ** 2 > 0:
            width = p.sigma
        else:
            decay = max(p.eta - c / p.sigma ** 2, 1.0 / p.sigma)
            width = min(p.sigma, 1.0 / decay)
    else:
        width = 1.0 / np.sqrt((n - 1) / x_star ** 2 + 1.0 / p.sigma ** 2)
    lo = max(0.0, x_star - 37.0 * width)
    hi = x_star + 37.0 * width
    log_norm = n * np.log(p.eta) - gammaln(n) - np.log(p.sigma) - 0.5 * _LOG_2PI

    def integrand(x):
        if x <= 0.0:
            return 0.0
        logv = (log_norm + (n - 1) * np.log(x) - p.eta * x
                - 0.5 * ((x - c) / p.sigma) ** 2)
        return float(np.exp(logv))

    value, abserr = integrate.quad(integrand, lo, hi, epsabs=1e-12, epsrel=1e-10,
                                   limit=200)
    if not np.isfinite(value) or (value > 0 and abserr > max(1e-10, 1e-6 * value)):
        raise QuadratureFailure(
            f"conditional density quadrature error {abserr} at r={r}, n={n}"
        )
    return float(value)


def _conditional_density_vec(r: np.ndarray, n: int, p: JumpDiffusionParams,
                             max_panels: int = 2000,
                             half_width_mult: float = 37.0) -> np.ndarray:
    """Vectorized f(r|n) for n >= 1 over an array of increments.

    The product of the Gamma(n, eta) jump-sum density and the normal kernel
    is log-concave with local width 1 / sqrt((n-1)/x*^2 + 1/sigma^2) around
    its per-increment peak x*; Gauss-Legendre panels are sized from that
    width so narrow jump spikes are resolved.  When the gamma part is wide
    and smooth relative to the normal kernel, Gauss-Hermite in the normal
    variable is used instead (it scales to arbitrarily large n).
    """
    m0 = p.diffusion_mean
    sigma, eta = p.sigma, p.eta
    c = r - m0
    if n == 1:
        # exact exponential-normal convolution:
        # eta * exp(eta^2 sigma^2 / 2 - eta c) * Phi(c/sigma - eta sigma)
        logv = (np.log(eta) + 0.5 * (eta * sigma) ** 2 - eta * c
                + log_ndtr(c / sigma - eta * sigma))
        return np.exp(logv)
    gamma_sd = np.sqrt(n) / eta
    if n >= _GAUSS_HERMITE_MIN_N and gamma_sd >= 3.0 * sigma:
        # f(r|n) = E_Z[gamma_pdf(c - sigma Z)] with Z standard normal.
        x = c[:, None] - np.sqrt(2.0) * sigma * _GH_NODES[None, :]
        logv = np.where(
            x > 0,
            n * np.log(eta) + (n - 1) * np.log(np.where(x > 0, x, 1.0))
            - eta * np.where(x > 0, x, 0.0) - gammaln(n),
            -np.inf,
        )
        return (np.exp(logv) @ _GH_WEIGHTS) / np.sqrt(np.pi)

    x_star = np.maximum(_peak_location(c, n, eta, sigma), 1e-300)
    width = 1.0 / np.sqrt((n - 1) / x_star ** 2 + 1.0 / sigma ** 2)
    lo = max(0.0, float(np.min(x_star - half_width_mult * width)))
    hi = float(np.max(x_star + half_width_mult * width))
    panel = float(width.min())
    n_panels = int(np.ceil((hi - lo) / panel))
    if n_panels > max_panels:
        panel = (hi - lo) / max_panels
        n_panels = max_panels
    edges = lo + panel * np.arange(n_panels + 1)
    edges[-1] = hi
    mids = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * np.diff(edges)
    nodes = (mids[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    wts = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()

    log_norm = n * np.log(eta) - gammaln(n) - np.log(sigma) - 0.5 * _LOG_2PI
    pos = nodes > 0
    log_gamma_part = np.full(nodes.shape, -np.inf)
    log_gamma_part[pos] = (log_norm + (n - 1) * np.log(nodes[pos])
                           - eta * nodes[pos])
    z = (nodes[None, :] - c[:, None]) / sigma
    logv = log_gamma_part[None, :] - 0.5 * z * z
    return np.exp(logv) @ wts


def increment_density(r, p: JumpDiffusionParams, law: RenewalLaw,
                      n_max: int = 10, tol: float = 1e-9):
    """Unconditional one-period increment density f(r) = sum_n P(n) f(r|n).

    The count mixture is truncated per ``renewal_jump_probabilities``; the
    result is a scalar for scalar input, else an array matching ``r``.
    """
    scalar = np.isscalar(r) or np.ndim(r) == 0
    r_arr = np.atleast_1d(np.asarray(r, dtype=float))
    probs = renewal_jump_probabilities(1.0, law, n_max=n_max, tol=tol)
    out = probs[0] * np.exp(_normal_logpdf(r_arr, p.diffusion_mean, p.sigma))
    for n in range(1, probs.size):
        if probs[n] <= 0.0:
            continue
        out = out + probs[n] * _conditional_density_vec(r_arr, n, p)
    return float(out[0]) if scalar else out


def increment_log_likelihood(increments: Sequence[float], p: JumpDiffusionParams,
                             law: RenewalLaw, n_max: int = 10,
                             tol: float = 1e-9) -> float:
    """Sum of log increment densities (hard floor keeps it finite)."""
    dens = increment_density(np.asarray(increments, dtype=float), p, law,
                             n_max=n_max, tol=tol)
    return float(np.sum(np.log(np.maximum(dens, 1e-300))))


@dataclass(frozen=True)
class CalibrationResult:
    params: JumpDiffusionParams
    loglik: float
    converged: bool
    weak_identification: bool
    family: RenewalFamily
    n_starts: int
    best_start: int


def _calibration_objective(theta: np.ndarray, increments: np.ndarray,
                           family: RenewalFamily, n_max: int,
                           mass_floor: float = 0.999) -> float:
    mu = theta[0]
    if not np.all(np.isfinite(theta)) or abs(mu) > 1e3 or np.any(np.abs(theta[1:]) > 25):
        return 1e12
    sigma, eta, alpha, beta = np.exp(theta[1:])
    p = JumpDiffusionParams(mu, sigma, eta, alpha, beta)
    law = RenewalLaw(family, alpha, beta)
    try:
        probs = renewal_jump_probabilities(1.0, law, n_max=n_max, tol=1e-12)
    except QuadratureFailure:
        return 1e12
    dens = probs[0] * np.exp(_normal_logpdf(increments, p.diffusion_mean, sigma))
    for n in range(1, probs.size):
        # a mixture term bounded by P(n)/(sigma sqrt(2 pi)) below 1e-14 cannot
        # move the log-likelihood at optimizer tolerance
        if probs[n] / sigma > 1e-13:
            dens = dens + probs[n] * _conditional_density_vec(
                increments, n, p, half_width_mult=25.0)
    loglik = float(np.sum(np.log(np.maximum(dens, 1e-300))))
    # Parameter regions whose truncated count mixture loses real mass cannot
    # be certified by this likelihood; push the search back smoothly.
    mass = float(probs.sum())
    penalty = 0.0
    if mass < mass_floor:
        penalty = 1e4 * increments.size * (mass_floor - mass) ** 2
    return -loglik + penalty


def _default_starts(increments: np.ndarray) -> list[np.ndarray]:
    """Moment-informed multi-start grid on (mu, log sigma, log eta, log alpha, log beta)."""
    m = float(np.mean(increments))
    s = max(float(np.std(increments)), 1e-3)
    starts = []
    for sigma_frac, (alpha0, beta0) in (
        (1.0, (2.0, 0.4)), (1.0, (1.0, 0.2)), (0.7, (1.0, 0.5)), (0.7, (2.0, 1.0)),
        (0.9, (0.5, 0.1)), (0.5, (1.0, 1.0)), (1.0, (4.0, 0.5)), (0.6, (2.0, 0.2)),
    ):
        sigma0 = sigma_frac * s
        eta0 = 2.0 / s
        mean_count = beta0 / alpha0  # renewal rate approximation
        mu0 = m + 0.5 * sigma0 ** 2 - mean_count / eta0
        starts.append(np.array([mu0, np.log(sigma0), np.log(eta0),
                                np.log(alpha0), np.log(beta0)]))
    return starts


def _theta_of(p: JumpDiffusionParams) -> np.ndarray:
    return np.array([p.mu, np.log(p.sigma), np.log(p.eta),
                     np.log(p.alpha), np.log(p.beta)])


def calibrate(k_series: Sequence[float],
              law_family: RenewalFamily = RenewalFamily.GAMMA,
              init: Optional[JumpDiffusionParams] = None,
              starts: int = 8, n_max: int = 10,
              maxiter: Optional[int] = None,
              polish: bool = True,
              compute_curvature: bool = True) -> CalibrationResult:
    """Maximize the increment likelihood over (mu, sigma, eta, alpha, beta).

    Positivity is enforced by optimizing log parameters; each start runs
    Nelder-Mead followed by a quasi-Newton polish.  ``init`` adds a warm
    start (and ``starts=1`` with ``init`` gives the cheap warm-started path
    used by the bootstrap engine).  The returned ``k0`` anchors projections
    at the last observed index value.
    """
    k = np.asarray(k_series, dtype=float)
    if k.ndim != 1 or k.size < 6:
        raise DegenerateFit("need at least 6 index values (5 increments)")
    increments = np.diff(k)
    family = RenewalFamily(law_family)

    theta_starts: list[np.ndarray] = []
    if init is not None:
        theta_starts.append(_theta_of(init))
    theta_starts.extend(_default_starts(increments))
    theta_starts = theta_starts[:max(starts, 1)]

    best = None
    best_idx = -1
    nm_maxiter = maxiter if maxiter is not None else 400 * 5
    for idx, theta0 in enumerate(theta_starts):
        res = optimize.minimize(
            _calibration_objective, theta0,
            args=(increments, family, n_max),
            method="Nelder-Mead",
            options={"maxiter": nm_maxiter, "xatol": 1e-7, "fatol": 1e-9},
        )
        cand = res
        if polish:
            refined = optimize.minimize(
                _calibration_objective, res.x,
                args=(increments, family, n_max),
                method="L-BFGS-B",
                options={"maxiter": 60 if maxiter is None
                         else min(maxiter, 60)},
            )
            if refined.fun <= res.fun:
                cand = refined
        if np.isfinite(cand.fun) and (best is None or cand.fun < best.fun):
            best = cand
            best_idx = idx
    if best is None or best.fun >= 1e12:
        raise NonConvergence("jump-diffusion calibration failed from every start")

    mu = float(best.x[0])
    sigma, eta, alpha, beta = (float(v) for v in np.exp(best.x[1:]))
    params = JumpDiffusionParams(mu, sigma, eta, alpha, beta, k0=float(k[-1]))
    law = RenewalLaw(family, alpha, beta)
    loglik = increment_log_likelihood(increments, params, law, n_max=n_max)

    weak = False
    if compute_curvature:
        weak = _weak_identification(best.x, increments, family, n_max)
        if weak:
            warnings.warn(
                "jump parameters (eta, alpha, beta) are weakly identified",
                WeakIdentificationWarning,
                stacklevel=2,
            )
    return CalibrationResult(
        params=params, loglik=loglik, converged=bool(best.success),
        weak_identification=weak, family=family,
        n_starts=len(theta_starts), best_start=best_idx,
    )


def _weak_identification(theta: np.ndarray, increments: np.ndarray,
                         family: RenewalFamily, n_max: int,
                         h: float = 1e-3, rcond: float = 1e-7) -> bool:
    """Near-singular curvature in the (log eta, log alpha, log beta) block."""
    idx = [2, 3, 4]
    hess = np.zeros((3, 3))

    def f(t):
        return _calibration_objective(t, increments, family, n_max)

    f0 = f(theta)
    for a in range(3):
        for b in range(a, 3):
            ta = np.array(theta)
            tb = np.array(theta)
            tab = np.array(theta)
            ta[idx[a]] += h
            tb[idx[b]] += h
            tab[idx[a]] += h
            tab[idx[b]] += h
            hess[a, b] = hess[b, a] = (f(tab) - f(ta) - f(tb) + f0) / h ** 2
    eigvals = np.linalg.eigvalsh(hess)
    scale = max(abs(eigvals.max()), 1.0)
    return bool(eigvals.min() < rcond * scale)


def simulate_k(p: JumpDiffusionParams, law: Optional[RenewalLaw], horizon: int,
               rng: np.random.Generator,
               jump_persistence: str = "one_year") -> np.ndarray:
    """Simulate k_1..k_horizon from the calibrated dynamics.

    ``jump_persistence='permanent'`` accumulates every jump into the level
    (the form the increment likelihood assumes); ``'one_year'`` treats each
    jump as a transitory spike that leaves the index after one period.
    ``law=None`` disables the jump process entirely.
    """
    if horizon < 1:
        raise DomainError("horizon must be >= 1")
    if jump_persistence not in ("permanent", "one_year"):
        raise DomainError(f"unknown jump_persistence {jump_persistence!r}")
    t = np.arange(1, horizon + 1, dtype=float)
    w = np.cumsum(rng.standard_normal(horizon))
    path = p.k0 + p.diffusion_mean * t + p.sigma * w

    if law is not None:
        arrivals = []
        clock = 0.0
        while True:
            clock += float(law.sample_interarrivals(rng, None))
            if clock > horizon:
                break
            arrivals.append(clock)
        if arrivals:
            arrivals_arr = np.asarray(arrivals)
            sizes = rng.exponential(scale=1.0 / p.eta, size=arrivals_arr.size)
            year = np.ceil(arrivals_arr).astype(int)  # arrival in (t-1, t]
            per_year = np.zeros(horizon)
            np.add.at(per_year, year - 1, sizes)
            if jump_persistence == "permanent":
                path = path + np.cumsum(per_year)
            else:
                path = path + per_year
    return path


def project_rates(lc: LCParams, k_path: Sequence[float],
                  ages: Optional[Sequence[int]] = None,
                  start_year: Optional[int] = None) -> RateSurface:
    """Central-rate surface exp(a_x + b_x k_t) along a simulated index path."""
    k_path = np.asarray(k_path, dtype=float)
    if ages is None:
        sel = np.arange(lc.ages.size)
        out_ages = lc.ages
    else:
        out_ages = np.asarray(list(ages), dtype=int)
        if not np.all(np.isin(out_ages, lc.ages)):
            raise DomainError("requested ages outside the fitted age range")
        sel = np.searchsorted(lc.ages, out_ages)
    values = np.exp(lc.a[sel][:, None] + np.outer(lc.b[sel], k_path))
    first = int(lc.years[-1]) + 1 if start_year is None else int(start_year)
    years = np.arange(first, first + k_path.size)
    return RateSurface(out_ages, years, values, RateKind.CENTRAL)


def export_params(path, p: JumpDiffusionParams, family: RenewalFamily,
                  loglik: Optional[float] = None) -> None:
    payload: dict = {
        "mu": p.mu, "sigma": p.sigma, "eta": p.eta,
        "alpha": p.alpha, "beta": p.beta, "k0": p.k0,
        "renewal_family_gamma": 1.0 if RenewalFamily(family) == RenewalFamily.GAMMA else 0.0,
    }
    if loglik is not None:
        payload["loglik"] = loglik
    paramio.write_params(path, payload)


def import_params(path) -> tuple[JumpDiffusionParams, RenewalFamily]:
    raw = paramio.read_params(path)
    p = JumpDiffusionParams(
        mu=float(raw["mu"]), sigma=float(raw["sigma"]), eta=float(raw["eta"]),
        alpha=float(raw["alpha"]), beta=float(raw["beta"]),
        k0=float(raw.get("k0", 0.0)),
    )
    family = RenewalFamily.GAMMA if raw.get("renewal_family_gamma", 1.0) >= 0.5 \
        else RenewalFamily.WEIBULL
    return p, family
