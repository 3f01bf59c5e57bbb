"""Seeded bootstrap scenario engine.

Per scenario: resample death counts (Poisson for the reference panel,
binomial for the book), refit the mortality models on the resampled data
(parameter error), refit and simulate the period dynamics (process error),
compose future rate surfaces for both populations, and thin the book's
lives binomially along the age-65 cohort diagonal (sampling risk).

Every scenario draws from its own child stream of the master seed, so a
scenario set is bit-identical no matter how many workers execute it.
"""

from __future__ import annotations

import dataclasses
import json
import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from . import altmodels, bookmodels, jumpdiffusion, leecarter
from .bookmodels import AR1Params, BookFamily, BookModelFit, fit_ar1, fit_book, project_book_k, book_rates
from .errors import DomainError, LongbasisError, ScenarioRefitFailure
from .jumpdiffusion import JumpDiffusionParams, calibrate, simulate_k
from .leecarter import FitMethod, LCFit, LCParams, fit_lc
from .panels import MortalityPanel, PopulationTag, RateKind, RateSurface, align_panels
from .renewal import RenewalFamily, RenewalLaw
from .rngstreams import child_stream

FORMAT_VERSION = 1


class ModelChoice(str, Enum):
    RENEWAL_JUMP_CAE = "renewal_jump_cae"
    ZHOU_JUMPS = "zhou_jumps"
    LC_COHORTS = "lc_cohorts"


@dataclass(frozen=True)
class ScenarioConfig:
    n_scenarios: int = 10_000
    horizon: int = 10
    master_seed: int = 0
    book_size_l65: int = 10_000
    model_choice: ModelChoice = ModelChoice.RENEWAL_JUMP_CAE
    jump_persistence: str = "one_year"
    floor_rate: float = 1e-10
    annuity_start_age: int = 65
    resample: bool = True                      # False = diagnostic --no-resample
    book_family: BookFamily = BookFamily.CAE
    renewal_family: RenewalFamily = RenewalFamily.GAMMA
    renewal_n_max: int = 10
    calibration_starts: int = 8
    scenario_calibration_maxiter: int = 60
    max_retries: int = 5
    max_failure_fraction: float = 0.01
    threads: int = 1
    store_refit_params: bool = False

    def __post_init__(self):
        if self.n_scenarios < 1 or self.horizon < 1 or self.book_size_l65 < 1:
            raise DomainError("n_scenarios, horizon, book_size_l65 must be >= 1")
        object.__setattr__(self, "model_choice", ModelChoice(self.model_choice))
        object.__setattr__(self, "book_family", BookFamily(self.book_family))
        object.__setattr__(self, "renewal_family", RenewalFamily(self.renewal_family))

    def to_json_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("model_choice", "book_family", "renewal_family"):
            d[key] = d[key].value if isinstance(d[key], Enum) else d[key]
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class ScenarioSet:
    """Simulated future surfaces and lives paths for every scenario."""

    config: ScenarioConfig
    ages: np.ndarray                # common ages (A,)
    future_years: np.ndarray        # (H,)
    ref_m: np.ndarray               # (S, A, H) reference central rates
    book_m: np.ndarray              # (S, A, H) book central rates
    book_q: np.ndarray              # (S, A, H) book death probabilities
    lives: np.ndarray               # (S, H+1) uint32, lives[.,0] == l65
    n_redrawn: int = 0
    refit_params: Optional[list] = None

    @property
    def n_scenarios(self) -> int:
        return self.ref_m.shape[0]

    def ref_q_cohort(self, start_age: int) -> np.ndarray:
        """Reference q along the (start_age + t, t) diagonal, shape (S, H)."""
        h = self.future_years.size
        idx = np.searchsorted(self.ages, start_age + np.arange(h))
        if np.any(idx >= self.ages.size) or \
                not np.array_equal(self.ages[idx], start_age + np.arange(h)):
            raise DomainError("cohort diagonal leaves the common age range")
        q = -np.expm1(-self.ref_m[:, idx, np.arange(h)])
        return q

    def book_q_cohort(self, start_age: int) -> np.ndarray:
        h = self.future_years.size
        idx = np.searchsorted(self.ages, start_age + np.arange(h))
        if np.any(idx >= self.ages.size) or \
                not np.array_equal(self.ages[idx], start_age + np.arange(h)):
            raise DomainError("cohort diagonal leaves the common age range")
        return self.book_q[:, idx, np.arange(h)]


def simulate_lives(l0: int, q_path, rng: np.random.Generator) -> np.ndarray:
    """Binomial thinning l_{t+1} ~ Binomial(l_t, 1 - q_t); returns l_0..l_H."""
    q_path = np.asarray(q_path, dtype=float)
    if np.any(q_path <= 0.0) or np.any(q_path >= 1.0):
        raise DomainError("death probabilities must lie in (0, 1)")
    if l0 < 0:
        raise DomainError("l0 must be >= 0")
    out = np.empty(q_path.size + 1, dtype=np.uint32)
    out[0] = l0
    alive = int(l0)
    for t, q in enumerate(q_path):
        alive = int(rng.binomial(alive, 1.0 - q)) if alive > 0 else 0
        out[t + 1] = alive
    return out


# --- base fits (computed once per run) --------------------------------------

@dataclass
class _BaseFits:
    model: ModelChoice
    ref_panel: MortalityPanel
    book_panel: MortalityPanel          # restricted to overlap years
    common_ages: np.ndarray
    ref_fit: Optional[LCFit] = None
    book_fit: Optional[BookModelFit] = None
    jump: Optional[jumpdiffusion.CalibrationResult] = None
    ar1: Optional[AR1Params] = None
    zhou: Optional[altmodels.ZhouStyleParams] = None
    book_lc_fit: Optional[LCFit] = None  # zhou: population-2 LC fit
    cohorts: Optional[altmodels.LCCohortsFit] = None
    rw_mu: float = 0.0                   # lc_cohorts reference drift
    rw_sd: float = 0.0
    ref_mu_hat: Optional[np.ndarray] = None   # Poisson means for resampling
    book_q_hat: Optional[np.ndarray] = None   # binomial probabilities
    book_trials: Optional[np.ndarray] = None
    year_gap: int = 0                    # ref last year - book last year


def _prepare_base(ref_panel: MortalityPanel, book_panel: MortalityPanel,
                  cfg: ScenarioConfig) -> _BaseFits:
    pair = align_panels(ref_panel, book_panel)
    ref, book = pair.reference, pair.book
    overlap = pair.overlap_years
    book = book.restrict(years=range(int(overlap[0]), int(overlap[-1]) + 1))
    base = _BaseFits(model=cfg.model_choice, ref_panel=ref, book_panel=book,
                     common_ages=ref.ages,
                     year_gap=int(ref.years[-1]) - int(book.years[-1]))

    if cfg.model_choice == ModelChoice.RENEWAL_JUMP_CAE:
        base.ref_fit = fit_lc(ref, FitMethod.POISSON_MLE)
        base.book_fit = fit_book(cfg.book_family, base.ref_fit.params, book)
        base.jump = calibrate(base.ref_fit.params.k, cfg.renewal_family,
                              starts=cfg.calibration_starts,
                              compute_curvature=False)
        base.ar1 = fit_ar1(base.book_fit.k)
        ref_log_m = base.ref_fit.params.log_rates()
        book_log_m = _book_fitted_log_m(base.book_fit, base.ref_fit.params)
    elif cfg.model_choice == ModelChoice.ZHOU_JUMPS:
        base.ref_fit = fit_lc(ref, FitMethod.POISSON_MLE)
        base.book_lc_fit = fit_lc(book, FitMethod.POISSON_MLE)
        base.zhou = altmodels.fit_zhou(ref, book)
        ref_log_m = base.ref_fit.params.log_rates()
        book_log_m = base.book_lc_fit.params.log_rates()
    else:
        base.cohorts = altmodels.fit_lc_cohorts(ref, book)
        dk = np.diff(base.cohorts.k)
        base.rw_mu = float(np.mean(dk))
        base.rw_sd = float(np.std(dk, ddof=1))
        base.ar1 = fit_ar1(base.cohorts.book.k)
        ref_log_m = base.cohorts.reference_log_rates()
        ref_params_stub = LCParams(ages=base.cohorts.ages, years=base.cohorts.years,
                                   a=base.cohorts.a, b=base.cohorts.b,
                                   k=base.cohorts.k)
        book_log_m = _book_fitted_log_m(base.cohorts.book, ref_params_stub,
                                        ref_log_m=ref_log_m)

    base.ref_mu_hat = ref.exposures * np.exp(ref_log_m)
    base.book_q_hat = -np.expm1(-np.exp(book_log_m))
    base.book_trials = np.maximum(np.rint(book.exposures), 1.0).astype(np.int64)
    return base


def _book_fitted_log_m(fit: BookModelFit, ref_params: LCParams,
                       ref_log_m: Optional[np.ndarray] = None) -> np.ndarray:
    """Fitted book log rates on the book fit's (ages x overlap years) grid."""
    if ref_log_m is None:
        ref_log_m = ref_params.log_rates()
    rows = np.searchsorted(ref_params.ages, fit.ages)
    cols = np.searchsorted(ref_params.years, fit.years)
    offset = ref_log_m[np.ix_(rows, cols)]
    if fit.family == BookFamily.CBD:
        q_ref = -np.expm1(-np.exp(offset))
        z = np.log(q_ref) - np.log1p(-q_ref) + fit.kappa1[None, :] \
            + np.outer(fit.ages.astype(float) - fit.xbar, fit.kappa2)
        return np.log(np.logaddexp(0.0, z))
    if fit.family == BookFamily.APC:
        gamma_add = fit.gamma[np.searchsorted(
            fit.cohorts, fit.years[None, :] - fit.ages[:, None])]
        return offset + fit.a[:, None] + fit.k[None, :] + gamma_add
    if fit.family == BookFamily.REL_LC:
        return offset + fit.a[:, None] + np.outer(fit.b, fit.k)
    return offset + fit.a[:, None] + np.outer(fit.b_ref, fit.k)


# --- one scenario -------------------------------------------------------------

def _run_scenario(base: _BaseFits, cfg: ScenarioConfig, scenario: int,
                  retry: int) -> dict:
    rng = child_stream(cfg.master_seed, scenario, retry)
    ref, book = base.ref_panel, base.book_panel
    h = cfg.horizon

    if cfg.resample:
        ref_deaths = rng.poisson(base.ref_mu_hat).astype(float)
        book_deaths = rng.binomial(base.book_trials, base.book_q_hat).astype(float)
        ref_s = MortalityPanel(PopulationTag.REFERENCE, ref.ages, ref.years,
                               np.maximum(ref_deaths, 1e-8), ref.exposures)
        book_s = MortalityPanel(PopulationTag.BOOK, book.ages, book.years,
                                book_deaths, book.exposures)
    else:
        ref_s, book_s = ref, book

    if base.model == ModelChoice.RENEWAL_JUMP_CAE:
        if cfg.resample:
            ref_fit = fit_lc(ref_s, FitMethod.POISSON_MLE)
            book_fit = fit_book(cfg.book_family, ref_fit.params, book_s)
            jump = calibrate(ref_fit.params.k, cfg.renewal_family,
                             init=base.jump.params, starts=1,
                             maxiter=cfg.scenario_calibration_maxiter,
                             n_max=cfg.renewal_n_max,
                             polish=False, compute_curvature=False)
            jp = jump.params
            ar1 = fit_ar1(book_fit.k)
        else:
            ref_fit, book_fit, jp, ar1 = (base.ref_fit, base.book_fit,
                                          base.jump.params, base.ar1)
        law = RenewalLaw(cfg.renewal_family, jp.alpha, jp.beta)
        k_ref = simulate_k(jp, law, h, rng, jump_persistence=cfg.jump_persistence)
        k_book_full = project_book_k(ar1, float(book_fit.k[-1]),
                                     base.year_gap + h, rng)
        k_book = k_book_full[-h:]
        ref_surface = jumpdiffusion.project_rates(ref_fit.params, k_ref)
        book_surface = book_rates(book_fit, ref_surface, k_book)
        params_snapshot = {"mu": jp.mu, "sigma": jp.sigma, "eta": jp.eta,
                           "alpha": jp.alpha, "beta": jp.beta}
    elif base.model == ModelChoice.ZHOU_JUMPS:
        if cfg.resample:
            lc1 = fit_lc(ref_s, FitMethod.POISSON_MLE)
            lc2 = fit_lc(book_s, FitMethod.POISSON_MLE)
            zhou = altmodels.fit_zhou(ref_s, book_s, max_iter=40)
        else:
            lc1, lc2, zhou = base.ref_fit, base.book_lc_fit, base.zhou
        k1, k2 = altmodels.simulate_zhou(zhou, h, rng)
        start_year = int(ref.years[-1]) + 1
        ref_surface = jumpdiffusion.project_rates(lc1.params, k1,
                                                  start_year=start_year)
        book_surface = jumpdiffusion.project_rates(lc2.params, k2,
                                                   start_year=start_year)
        params_snapshot = {"mu_k": zhou.mu_k, "v_z": zhou.v_z}
    else:  # LC_COHORTS
        if cfg.resample:
            cohorts = altmodels.fit_lc_cohorts(ref_s, book_s)
            dk = np.diff(cohorts.k)
            rw_mu = float(np.mean(dk))
            rw_sd = float(np.std(dk, ddof=1))
            ar1 = fit_ar1(cohorts.book.k)
        else:
            cohorts, rw_mu, rw_sd, ar1 = (base.cohorts, base.rw_mu,
                                          base.rw_sd, base.ar1)
        k_ref = float(cohorts.k[-1]) + np.cumsum(
            rw_mu + rw_sd * rng.standard_normal(h))
        start_year = int(ref.years[-1]) + 1
        future_years = np.arange(start_year, start_year + h)
        ref_log = cohorts.reference_log_rates(k=k_ref, years=future_years)
        ref_surface = RateSurface(cohorts.ages, future_years, np.exp(ref_log),
                                  RateKind.CENTRAL)
        k_book_full = project_book_k(ar1, float(cohorts.book.k[-1]),
                                     base.year_gap + h, rng)
        book_surface = book_rates(cohorts.book, ref_surface, k_book_full[-h:])
        params_snapshot = {"rw_mu": rw_mu, "rw_sd": rw_sd}

    book_m = book_surface.values
    book_q = -np.expm1(-book_m)
    if np.any(book_q <= 0.0) or np.any(book_q >= 1.0):
        raise DomainError("scenario produced a book q outside (0, 1)")

    ages = base.common_ages
    start = cfg.annuity_start_age
    idx = np.searchsorted(ages, start + np.arange(h))
    if np.any(idx >= ages.size) or \
            not np.array_equal(ages[idx], start + np.arange(h)):
        raise DomainError("lives diagonal exceeds the common age range")
    q_diag = book_q[idx, np.arange(h)]
    lives = simulate_lives(cfg.book_size_l65, q_diag, rng)

    return {
        "scenario": scenario,
        "retry": retry,
        "ref_m": ref_surface.values,
        "book_m": book_m,
        "book_q": book_q,
        "lives": lives,
        "future_years": ref_surface.years,
        "params": params_snapshot if cfg.store_refit_params else None,
    }


def _run_scenario_with_retries(base: _BaseFits, cfg: ScenarioConfig,
                               scenario: int) -> dict:
    last_error: Exception | None = None
    for retry in range(cfg.max_retries + 1):
        try:
            return _run_scenario(base, cfg, scenario, retry)
        except (LongbasisError, np.linalg.LinAlgError, FloatingPointError) as exc:
            last_error = exc
    raise ScenarioRefitFailure(
        f"scenario {scenario} failed after {cfg.max_retries + 1} draws: {last_error}"
    )


_WORKER_STATE: dict = {}


def _worker_init(base: _BaseFits, cfg: ScenarioConfig) -> None:
    _WORKER_STATE["base"] = base
    _WORKER_STATE["cfg"] = cfg


def _worker_run(scenario: int) -> dict:
    return _run_scenario_with_retries(
        _WORKER_STATE["base"], _WORKER_STATE["cfg"], scenario)


def bootstrap_scenarios(ref_panel: MortalityPanel, book_panel: MortalityPanel,
                        cfg: ScenarioConfig) -> ScenarioSet:
    """Generate the full seeded scenario set (see module docstring).

    Scenarios that fail to refit are redrawn from a fresh substream; the
    run aborts with :class:`ScenarioRefitFailure` once redraws exceed
    ``max_failure_fraction`` of ``n_scenarios``.
    """
    base = _prepare_base(ref_panel, book_panel, cfg)
    s_count = cfg.n_scenarios

    results: list[Optional[dict]] = [None] * s_count
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads,
                                 initializer=_worker_init,
                                 initargs=(base, cfg)) as pool:
            for res in pool.map(_worker_run, range(s_count), chunksize=32):
                results[res["scenario"]] = res
    else:
        for s in range(s_count):
            results[s] = _run_scenario_with_retries(base, cfg, s)

    n_redrawn = sum(r["retry"] for r in results)
    if n_redrawn > cfg.max_failure_fraction * s_count:
        raise ScenarioRefitFailure(
            f"{n_redrawn} redraws exceed {cfg.max_failure_fraction:.1%} of "
            f"{s_count} scenarios"
        )

    first = results[0]
    a_n = first["ref_m"].shape[0]
    h = cfg.horizon
    ref_m = np.empty((s_count, a_n, h))
    book_m = np.empty((s_count, a_n, h))
    book_q = np.empty((s_count, a_n, h))
    lives = np.empty((s_count, h + 1), dtype=np.uint32)
    for s, res in enumerate(results):
        ref_m[s] = res["ref_m"]
        book_m[s] = res["book_m"]
        book_q[s] = res["book_q"]
        lives[s] = res["lives"]
    return ScenarioSet(
        config=cfg, ages=base.common_ages,
        future_years=first["future_years"],
        ref_m=ref_m, book_m=book_m, book_q=book_q, lives=lives,
        n_redrawn=n_redrawn,
        refit_params=[r["params"] for r in results]
        if cfg.store_refit_params else None,
    )


# --- persistence --------------------------------------------------------------

def save_scenarios(sset: ScenarioSet, out_dir) -> None:
    """Write manifest.json plus a fixed-layout little-endian binary blob.

    scenarios.bin layout (C order, little endian): ref_m then book_m then
    book_q as float64 arrays of shape (S, A, H), then lives as uint32 of
    shape (S, H+1).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    blob = b"".join([
        sset.ref_m.astype("<f8").tobytes(order="C"),
        sset.book_m.astype("<f8").tobytes(order="C"),
        sset.book_q.astype("<f8").tobytes(order="C"),
        sset.lives.astype("<u4").tobytes(order="C"),
    ])
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": sset.config.to_json_dict(),
        "n_scenarios": int(sset.n_scenarios),
        "ages": [int(a) for a in sset.ages],
        "future_years": [int(y) for y in sset.future_years],
        "n_redrawn": int(sset.n_redrawn),
        "arrays": [
            {"name": "ref_m", "dtype": "<f8",
             "shape": list(sset.ref_m.shape)},
            {"name": "book_m", "dtype": "<f8",
             "shape": list(sset.book_m.shape)},
            {"name": "book_q", "dtype": "<f8",
             "shape": list(sset.book_q.shape)},
            {"name": "lives", "dtype": "<u4",
             "shape": list(sset.lives.shape)},
        ],
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    (out / "scenarios.bin").write_bytes(blob)
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scenarios(in_dir) -> ScenarioSet:
    src = Path(in_dir)
    with open(src / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DomainError(f"unsupported scenario format {manifest.get('format_version')}")
    blob = (src / "scenarios.bin").read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise DomainError("scenarios.bin does not match its manifest checksum")
    arrays = {}
    offset = 0
    for spec_entry in manifest["arrays"]:
        dtype = np.dtype(spec_entry["dtype"])
        shape = tuple(spec_entry["shape"])
        n_bytes = dtype.itemsize * int(np.prod(shape))
        arrays[spec_entry["name"]] = np.frombuffer(
            blob, dtype=dtype, count=int(np.prod(shape)), offset=offset
        ).reshape(shape).copy()
        offset += n_bytes
    return ScenarioSet(
        config=ScenarioConfig.from_json_dict(manifest["config"]),
        ages=np.asarray(manifest["ages"], dtype=int),
        future_years=np.asarray(manifest["future_years"], dtype=int),
        ref_m=arrays["ref_m"], book_m=arrays["book_m"],
        book_q=arrays["book_q"], lives=arrays["lives"],
        n_redrawn=int(manifest["n_redrawn"]),
    )
