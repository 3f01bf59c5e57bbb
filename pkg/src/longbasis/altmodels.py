"""Comparison models for the hedge-effectiveness study.

Two baselines accompany the renewal-jump reference model:

* a two-population Lee-Carter model with at most one normal jump per
  population per year (joint jump states over both populations, a random
  walk with drift for population 1 and a stationary AR(1) spread), and
* an LC+Cohorts structure: reference Lee-Carter plus a cohort term, with a
  common-age-effect difference for the book.

Both expose the pieces the scenario engine needs so every model family can
be driven through one interface.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .bookmodels import BookFamily, BookModelFit, fit_ar1, fit_book, bic_value
from .errors import DomainError, NonConvergence
from .leecarter import LCParams, LCFit, fit_lc, apply_constraints, poisson_loglik
from .panels import MortalityPanel, RateKind, RateSurface
from . import paramio

# joint jump states ordered: (0,0), (0,1), (1,0), (1,1)
JOINT_STATES = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass(frozen=True)
class ZhouStyleParams:
    """Two-population LC-with-jumps parameters."""

    ages: np.ndarray
    a1: np.ndarray
    b1: np.ndarray
    a2: np.ndarray
    b2: np.ndarray
    mu_k: float
    v_z: float
    mu_y1: float
    v_y1: float
    mu_y2: float
    v_y2: float
    mu_dk: float
    phi_dk: float
    v_zdk: float
    jump_joint_pmf: np.ndarray     # P over JOINT_STATES, sums to 1
    k0_1: float = 0.0              # last jump-free level, population 1
    delta0: float = 0.0            # last jump-free spread k1 - k2

    def __post_init__(self):
        pmf = np.asarray(self.jump_joint_pmf, dtype=float)
        if pmf.shape != (4,) or np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-12:
            raise DomainError("jump_joint_pmf must be 4 probabilities summing to 1")
        if min(self.v_z, self.v_y1, self.v_y2, self.v_zdk) <= 0:
            raise DomainError("variances must be > 0")
        pmf.setflags(write=False)
        object.__setattr__(self, "jump_joint_pmf", pmf)


@dataclass(frozen=True)
class LCCohortsFit:
    """Reference LC+cohorts plus a common-age-effect book difference."""

    ages: np.ndarray
    years: np.ndarray
    a: np.ndarray
    b: np.ndarray
    k: np.ndarray
    gamma: np.ndarray
    cohorts: np.ndarray
    loglik: float
    book: Optional[BookModelFit] = None

    def reference_log_rates(self, k: Optional[np.ndarray] = None,
                            years: Optional[np.ndarray] = None) -> np.ndarray:
        yrs = self.years if years is None else np.asarray(years, dtype=int)
        kk = self.k if k is None else np.asarray(k, dtype=float)
        gamma_map = dict(zip((int(c) for c in self.cohorts), self.gamma))
        coh = yrs[None, :] - self.ages[:, None]
        add = np.vectorize(lambda c: gamma_map.get(int(c), 0.0))(coh)
        return self.a[:, None] + np.outer(self.b, kk) + add


def _lc_fit_on_panel(panel: MortalityPanel) -> LCFit:
    return fit_lc(panel)


def fit_zhou(ref_panel: MortalityPanel, book_panel: MortalityPanel,
             max_iter: int = 200, tol: float = 1e-8) -> ZhouStyleParams:
    """Fit the two-population LC-with-jumps model.

    Age effects come from independent Lee-Carter fits on each panel (the
    panels may cover different year ranges); the period dynamics and the
    joint jump distribution are estimated on the overlap years by an
    EM-style iteration: year-by-year posteriors over the four joint jump
    states given point estimates of the jump effects, followed by moment
    updates of drift, spread, and severity parameters.  Severity updates
    are frozen while the expected jump count is negligible, which keeps the
    no-jump limit stable.
    """
    fit1 = _lc_fit_on_panel(ref_panel)
    fit2 = _lc_fit_on_panel(book_panel)
    years = np.intersect1d(fit1.params.years, fit2.params.years)
    if years.size < 6:
        raise NonConvergence("need at least 6 overlap years for joint dynamics")
    k1 = fit1.params.k[np.searchsorted(fit1.params.years, years)]
    k2 = fit2.params.k[np.searchsorted(fit2.params.years, years)]
    T = years.size

    d1 = np.diff(k1)
    sd1 = max(float(np.std(d1)), 1e-6)
    severity_floor = 2.0 * sd1  # fixed anchor; a collapsing v_z cannot drag it down
    mu_k, v_z = float(np.mean(d1)), float(np.var(d1)) + 1e-12
    mu_y1 = mu_y2 = 2.0 * sd1
    v_y1 = v_y2 = max(float(np.var(d1)), 1e-6)
    spread = k1 - k2
    ar = fit_ar1(spread)
    mu_dk, phi_dk, v_zdk = ar.psi0, ar.psi1, max(ar.innovation_sd ** 2, 1e-12)
    pmf = np.array([0.85, 0.05, 0.05, 0.05])
    eps1 = np.zeros(T)
    eps2 = np.zeros(T)

    prev_vec = None
    for _ in range(max_iter):
        kh1 = k1 - eps1
        kh2 = k2 - eps2
        delta = kh1 - kh2
        q = np.zeros((T, 4))
        q[0, 0] = 1.0  # no increment observed for the first overlap year
        y1_post = np.zeros(T)
        y2_post = np.zeros(T)
        for t in range(1, T):
            logq = np.full(4, -np.inf)
            for s, (s1, s2) in enumerate(JOINT_STATES):
                r1 = k1[t] - s1 * mu_y1 - kh1[t - 1] - mu_k
                var1 = v_z + s1 * v_y1
                dt = (k1[t] - s1 * mu_y1) - (k2[t] - s2 * mu_y2)
                rd = dt - mu_dk - phi_dk * delta[t - 1]
                vard = v_zdk + s1 * v_y1 + s2 * v_y2
                logq[s] = (np.log(pmf[s] + 1e-300)
                           - 0.5 * (r1 ** 2 / var1 + np.log(var1))
                           - 0.5 * (rd ** 2 / vard + np.log(vard)))
            logq -= logq.max()
            w = np.exp(logq)
            w[w < 1e-12] = 0.0
            q[t] = w / w.sum()
            # severity posterior means given a jump, from the matching residual
            raw1 = k1[t] - kh1[t - 1] - mu_k
            y1_post[t] = mu_y1 + v_y1 / (v_y1 + v_z) * (raw1 - mu_y1)
            raw2 = (k2[t] - k1[t] + q[t, 2:].sum() * y1_post[t]
                    + mu_dk + phi_dk * delta[t - 1])
            y2_post[t] = mu_y2 + v_y2 / (v_y2 + v_zdk) * (raw2 - mu_y2)
        p1 = q[:, 2] + q[:, 3]
        p2 = q[:, 1] + q[:, 3]
        eps1 = p1 * y1_post
        eps2 = p2 * y2_post

        pmf = q[1:].mean(axis=0) + 1e-6
        pmf /= pmf.sum()
        kh1 = k1 - eps1
        kh2 = k2 - eps2
        dk1 = np.diff(kh1)
        mu_k, v_z = float(np.mean(dk1)), max(float(np.var(dk1)), 1e-10)
        sp = kh1 - kh2
        ar = fit_ar1(sp)
        mu_dk, phi_dk = ar.psi0, ar.psi1
        v_zdk = max(ar.innovation_sd ** 2, 1e-10)
        # severity scale floored at twice the initial increment volatility:
        # a "jump" indistinguishable from diffusion noise would let the EM
        # collapse into relabelling noise as jumps
        if p1[1:].sum() > 0.5:
            mu_y1 = float(np.sum(p1[1:] * y1_post[1:]) / p1[1:].sum())
            v_y1 = max(float(np.sum(p1[1:] * (y1_post[1:] - mu_y1) ** 2)
                             / p1[1:].sum()), 1e-4)
        mu_y1 = max(mu_y1, severity_floor)
        v_y1 = max(v_y1, 0.25 * v_z)
        if p2[1:].sum() > 0.5:
            mu_y2 = float(np.sum(p2[1:] * y2_post[1:]) / p2[1:].sum())
            v_y2 = max(float(np.sum(p2[1:] * (y2_post[1:] - mu_y2) ** 2)
                             / p2[1:].sum()), 1e-4)
        mu_y2 = max(mu_y2, severity_floor)
        v_y2 = max(v_y2, 0.25 * v_z)

        vec = np.array([mu_k, v_z, mu_y1, v_y1, mu_y2, v_y2,
                        mu_dk, phi_dk, v_zdk, *pmf])
        if prev_vec is not None and np.max(np.abs(vec - prev_vec)) < tol:
            break
        prev_vec = vec

    common = np.intersect1d(fit1.params.ages, fit2.params.ages)
    sel1 = np.searchsorted(fit1.params.ages, common)
    sel2 = np.searchsorted(fit2.params.ages, common)
    return ZhouStyleParams(
        ages=common,
        a1=fit1.params.a[sel1], b1=fit1.params.b[sel1],
        a2=fit2.params.a[sel2], b2=fit2.params.b[sel2],
        mu_k=mu_k, v_z=v_z, mu_y1=mu_y1, v_y1=v_y1, mu_y2=mu_y2, v_y2=v_y2,
        mu_dk=mu_dk, phi_dk=phi_dk, v_zdk=v_zdk,
        jump_joint_pmf=pmf,
        k0_1=float(kh1[-1]), delta0=float((kh1 - kh2)[-1]),
    )


def simulate_zhou(p: ZhouStyleParams, horizon: int, rng: np.random.Generator,
                  jump2_source: str = "own") -> tuple[np.ndarray, np.ndarray]:
    """Paired period-index paths (population 1, population 2).

    Draw order per year (fixed for reproducibility): level shock, spread
    shock, joint-state uniform, severity 1, severity 2.  Severities are
    drawn every year and applied only when the sampled state jumps; with
    the pmf degenerate at (0,0) the paths reduce to the jump-free random
    walk plus AR(1) spread.  ``jump2_source='population1'`` adds population
    1's jump to population 2 instead of its own.
    """
    if horizon < 1:
        raise DomainError("horizon must be >= 1")
    if jump2_source not in ("own", "population1"):
        raise DomainError(f"unknown jump2_source {jump2_source!r}")
    if abs(p.phi_dk) >= 1.0:
        raise DomainError("spread AR(1) must be stationary for simulation")
    cum = np.cumsum(p.jump_joint_pmf)
    k1 = np.empty(horizon)
    k2 = np.empty(horizon)
    kh1 = p.k0_1
    delta = p.delta0
    for t in range(horizon):
        z_k = rng.standard_normal()
        z_d = rng.standard_normal()
        u = rng.random()
        y1 = p.mu_y1 + np.sqrt(p.v_y1) * rng.standard_normal()
        y2 = p.mu_y2 + np.sqrt(p.v_y2) * rng.standard_normal()
        state = int(np.searchsorted(cum, u, side="right"))
        s1, s2 = JOINT_STATES[min(state, 3)]
        kh1 = kh1 + p.mu_k + np.sqrt(p.v_z) * z_k
        delta = p.mu_dk + p.phi_dk * delta + np.sqrt(p.v_zdk) * z_d
        kh2 = kh1 - delta
        k1[t] = kh1 + s1 * y1
        if jump2_source == "own":
            k2[t] = kh2 + s2 * y2
        else:
            k2[t] = kh2 + s1 * y1
    return k1, k2


def zhou_rate_surfaces(p: ZhouStyleParams, k1_path, k2_path,
                       start_year: int) -> tuple[RateSurface, RateSurface]:
    """Central-rate surfaces for both populations along simulated paths."""
    k1_path = np.asarray(k1_path, dtype=float)
    k2_path = np.asarray(k2_path, dtype=float)
    years = np.arange(start_year, start_year + k1_path.size)
    m1 = np.exp(p.a1[:, None] + np.outer(p.b1, k1_path))
    m2 = np.exp(p.a2[:, None] + np.outer(p.b2, k2_path))
    return (RateSurface(p.ages, years, m1, RateKind.CENTRAL),
            RateSurface(p.ages, years, m2, RateKind.CENTRAL))


def fit_lc_cohorts(ref_panel: MortalityPanel, book_panel: MortalityPanel,
                   max_iter: int = 500, rel_tol: float = 1e-11,
                   fit_book_part: bool = True) -> LCCohortsFit:
    """Reference LC+cohorts with a common-age-effect book difference.

    The reference surface log m = a_x + b_x k_t + gamma_{t-x} is fitted by
    Poisson likelihood: joint Newton over (a, k, gamma) for fixed b, then a
    Newton pass on b, repeated to convergence.  sum(b)=1 and sum(k)=0 are
    gauge choices; the cohort effects are constrained to sum to zero with
    zero linear trend, which pins the nearly flat cohort-trend direction
    that otherwise stalls the optimization.
    """
    from .bookmodels import _cohort_groups  # shared sparse-cohort handling

    m = ref_panel.deaths / ref_panel.exposures
    if np.any(m <= 0):
        raise DomainError("reference panel has zero rates; floor them first")
    ages, years = ref_panel.ages, ref_panel.years
    d, e = ref_panel.deaths, ref_panel.exposures
    A, Y = d.shape
    labels, compact = _cohort_groups(ages, years)
    G = int(compact.max()) + 1
    coh_pos = (years[None, :] - ages[:, None] - labels[0]).astype(int)
    cell_group = compact[coh_pos]
    onehot_g = np.zeros((A * Y, G))
    onehot_g[np.arange(A * Y), cell_group.ravel()] = 1.0

    # group-level basis orthogonal to cohort level and trend (weighted by
    # group sizes so the constraints hold on the per-cohort expansion)
    sizes = np.bincount(compact, minlength=G).astype(float)
    centers = np.bincount(compact, weights=labels.astype(float),
                          minlength=G) / sizes
    w_half = np.sqrt(sizes)
    span = np.stack([w_half, w_half * centers], axis=1)
    q_full, _ = np.linalg.qr(span, mode="complete")
    basis = (q_full[:, 2:] / w_half[:, None])  # gamma_g = basis @ xi

    log_m = np.log(m)
    a = log_m.mean(axis=1)
    u, s, vt = np.linalg.svd(log_m - a[:, None], full_matrices=False)
    b = u[:, 0] * np.sign(u[:, 0].sum())
    b = b / b.sum()
    k = s[0] * vt[0] * np.sign(u[:, 0].sum())
    gamma_g = np.zeros(G)

    def log_m_now(a, k, gamma_g, b):
        return a[:, None] + np.outer(b, k) + gamma_g[cell_group]

    # joint Gauss-Newton over (a, b, k, xi): the design has one row per cell
    # with columns [indicator(age), indicator(age)*k_t, indicator(year)*b_x,
    # cohort basis]; the two remaining gauge directions (b scale, k level)
    # are neutralized by a tiny ridge and removed after convergence.
    n_red = A + A + Y + (G - 2)
    age_ix = np.repeat(np.arange(A), Y)
    year_ix = np.tile(np.arange(Y), A)
    gamma_cols = onehot_g @ basis

    ll_prev = poisson_loglik(ref_panel, log_m_now(a, k, gamma_g, b))
    for _ in range(1, max_iter + 1):
        jac = np.zeros((A * Y, n_red))
        jac[np.arange(A * Y), age_ix] = 1.0
        jac[np.arange(A * Y), A + age_ix] = k[year_ix]
        jac[np.arange(A * Y), 2 * A + year_ix] = b[age_ix]
        jac[:, 2 * A + Y:] = gamma_cols
        mu = e * np.exp(log_m_now(a, k, gamma_g, b))
        grad = jac.T @ (d - mu).ravel()
        hess = jac.T @ (mu.ravel()[:, None] * jac)
        ridge = 1e-9 * np.trace(hess) / n_red
        step = np.linalg.solve(hess + ridge * np.eye(n_red), grad)
        scale = 1.0
        for _ in range(40):
            a_n = a + scale * step[:A]
            b_n = b + scale * step[A:2 * A]
            k_n = k + scale * step[2 * A:2 * A + Y]
            g_n = gamma_g + scale * (basis @ step[2 * A + Y:])
            ll = poisson_loglik(ref_panel, log_m_now(a_n, k_n, g_n, b_n))
            if np.isfinite(ll) and ll >= ll_prev - 1e-12:
                a, b, k, gamma_g = a_n, b_n, k_n, g_n
                break
            scale *= 0.5
        else:
            raise NonConvergence("lc+cohorts reference fit: step failed")
        if not np.isfinite(ll):
            raise NonConvergence("lc+cohorts reference fit diverged")
        if abs(ll - ll_prev) <= rel_tol * (abs(ll_prev) + 1.0):
            ll_prev = ll
            break
        ll_prev = ll
    else:
        raise NonConvergence("lc+cohorts reference fit did not converge")

    # gauges: b scale into k, k level into a (gamma constraints already hold)
    gamma = gamma_g[compact]
    sb = b.sum()
    a = a + b * k.mean()
    k = (k - k.mean()) * sb
    b = b / sb

    final_log_m = a[:, None] + np.outer(b, k) \
        + gamma[np.searchsorted(labels, years[None, :] - ages[:, None])]
    final_ll = poisson_loglik(ref_panel, final_log_m)

    fit = LCCohortsFit(ages=ages, years=years, a=a, b=b, k=k,
                       gamma=gamma, cohorts=labels, loglik=final_ll)
    if fit_book_part:
        ref_params = LCParams(ages=ages, years=years, a=a, b=b, k=k)
        ref_rates = RateSurface(ages, years, np.exp(final_log_m), RateKind.CENTRAL)
        book = fit_book(BookFamily.CAE, ref_params, book_panel,
                        ref_rates=ref_rates)
        fit = replace(fit, book=book)
    return fit


def export_zhou(path, p: ZhouStyleParams) -> None:
    payload: dict = {
        "a1": p.a1, "b1": p.b1, "a2": p.a2, "b2": p.b2,
        "mu_k": p.mu_k, "v_z": p.v_z,
        "mu_y1": p.mu_y1, "v_y1": p.v_y1, "mu_y2": p.mu_y2, "v_y2": p.v_y2,
        "mu_dk": p.mu_dk, "phi_dk": p.phi_dk, "v_zdk": p.v_zdk,
        "pmf": {i: float(v) for i, v in enumerate(p.jump_joint_pmf)},
        "k0_1": p.k0_1, "delta0": p.delta0,
    }
    keys = {name: p.ages for name in ("a1", "b1", "a2", "b2")}
    paramio.write_params(path, payload, index_keys=keys)


def import_zhou(path) -> ZhouStyleParams:
    raw = paramio.read_params(path)
    ages = np.array(sorted(raw["a1"].keys()), dtype=int)
    pmf = np.array([raw["pmf"][i] for i in range(4)])
    return ZhouStyleParams(
        ages=ages,
        a1=paramio.vector(raw, "a1", ages), b1=paramio.vector(raw, "b1", ages),
        a2=paramio.vector(raw, "a2", ages), b2=paramio.vector(raw, "b2", ages),
        mu_k=float(raw["mu_k"]), v_z=float(raw["v_z"]),
        mu_y1=float(raw["mu_y1"]), v_y1=float(raw["v_y1"]),
        mu_y2=float(raw["mu_y2"]), v_y2=float(raw["v_y2"]),
        mu_dk=float(raw["mu_dk"]), phi_dk=float(raw["phi_dk"]),
        v_zdk=float(raw["v_zdk"]), jump_joint_pmf=pmf,
        k0_1=float(raw.get("k0_1", 0.0)), delta0=float(raw.get("delta0", 0.0)),
    )
