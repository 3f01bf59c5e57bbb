"""Longevity-swap hedge metrics over a scenario set.

Per scenario the unhedged liability is the discounted lives path and the
swap leg is the discounted gap between the realized reference survivor
index and its forward curve.  The forward curve is the in-sample Monte
Carlo mean of the survivor index, so the swap has (sample) mean zero by
construction.  The variance-minimizing notional w = Cov(L, S) / Var(S)
gives risk reduction 1 - Var(L - wS)/Var(L) = corr(L, S)^2.

All reductions use numpy's pairwise summation over fixed-shape arrays, so
reports are bit-reproducible for a given scenario set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .engine import ScenarioSet, bootstrap_scenarios, ScenarioConfig
from .errors import DomainError, ZeroSwapVariance, ZeroUnhedgedVariance
from .panels import MortalityPanel
from .rngstreams import child_stream

_LIVES_STREAM_TAG = 1_000_001


class RiskMeasure(str, Enum):
    VARIANCE = "variance"


@dataclass(frozen=True)
class HedgeConfig:
    interest_rate: float = 0.03
    horizon: int = 10
    annuity_start_age: int = 65
    payment: float = 1.0
    book_sizes: tuple[int, ...] = (5_000, 10_000, 100_000)

    def __post_init__(self):
        if self.interest_rate <= -1.0:
            raise DomainError("interest_rate must exceed -100%")
        if self.horizon < 1:
            raise DomainError("horizon must be >= 1")
        object.__setattr__(self, "book_sizes",
                           tuple(int(b) for b in self.book_sizes))

    @property
    def discounts(self) -> np.ndarray:
        t = np.arange(1, self.horizon + 1, dtype=float)
        return (1.0 + self.interest_rate) ** (-t)


@dataclass(frozen=True)
class HedgeResult:
    L_samples: np.ndarray
    S_samples: np.ndarray
    w: float
    rr: float
    var_unhedged: float
    var_hedged: float
    risk_measure: RiskMeasure = RiskMeasure.VARIANCE


def liability_pv(lives_path: Sequence[float], cfg: HedgeConfig) -> float:
    """Discounted payments to survivors: sum_t l_t (1+r)^-t times payment."""
    lives = np.asarray(lives_path, dtype=float)
    if lives.size < cfg.horizon + 1:
        raise DomainError("lives path shorter than the hedge horizon")
    return float(cfg.payment * np.sum(lives[1:cfg.horizon + 1] * cfg.discounts))


def liability_pvs(lives: np.ndarray, cfg: HedgeConfig) -> np.ndarray:
    lives = np.asarray(lives, dtype=float)
    if lives.shape[1] < cfg.horizon + 1:
        raise DomainError("lives paths shorter than the hedge horizon")
    return cfg.payment * (lives[:, 1:cfg.horizon + 1] @ cfg.discounts)


def survivor_index(ref_q_path: Sequence[float], t: int) -> float:
    """t-year survival probability from the annuity start age."""
    q = np.asarray(ref_q_path, dtype=float)
    if t < 0 or t > q.size:
        raise DomainError("t outside the available path")
    if np.any(q <= 0.0) or np.any(q >= 1.0):
        raise DomainError("death probabilities must lie in (0, 1)")
    return float(np.prod(1.0 - q[:t]))


def survivor_indices(ref_q: np.ndarray) -> np.ndarray:
    """Cumulative survivor index per scenario: shape (S, H) for t = 1..H."""
    if np.any(ref_q <= 0.0) or np.any(ref_q >= 1.0):
        raise DomainError("death probabilities must lie in (0, 1)")
    return np.cumprod(1.0 - ref_q, axis=1)


def forward_survivor_index(scenario_set: ScenarioSet, t: int,
                           start_age: Optional[int] = None) -> float:
    """In-sample mean of the t-year survivor index over all scenarios."""
    age = scenario_set.config.annuity_start_age if start_age is None else start_age
    tp = survivor_indices(scenario_set.ref_q_cohort(age))
    if t < 1 or t > tp.shape[1]:
        raise DomainError("t outside the scenario horizon")
    return float(np.mean(tp[:, t - 1]))


def forward_curve(scenario_set: ScenarioSet,
                  start_age: Optional[int] = None) -> np.ndarray:
    age = scenario_set.config.annuity_start_age if start_age is None else start_age
    return np.mean(survivor_indices(scenario_set.ref_q_cohort(age)), axis=0)


def swap_pv(ref_q_path: Sequence[float], forwards: Sequence[float],
            cfg: HedgeConfig) -> float:
    """Discounted floating-minus-fixed survivor legs for one scenario."""
    forwards = np.asarray(forwards, dtype=float)
    tp = np.array([survivor_index(ref_q_path, t)
                   for t in range(1, cfg.horizon + 1)])
    return float(np.sum((tp - forwards[:cfg.horizon]) * cfg.discounts))


def swap_pvs(ref_q: np.ndarray, forwards: np.ndarray,
             cfg: HedgeConfig) -> np.ndarray:
    tp = survivor_indices(ref_q)[:, :cfg.horizon]
    return (tp - forwards[None, :cfg.horizon]) @ cfg.discounts


def optimal_weight(L_samples, S_samples) -> float:
    """Variance minimizer of L - wS: w = Cov(L, S) / Var(S)."""
    L = np.asarray(L_samples, dtype=float)
    S = np.asarray(S_samples, dtype=float)
    var_s = float(np.var(S))
    if var_s <= 0.0:
        raise ZeroSwapVariance("swap leg has zero sample variance")
    cov = float(np.mean((L - L.mean()) * (S - S.mean())))
    return cov / var_s


def risk_reduction(L_samples, S_samples, w: float) -> float:
    """rr = 1 - Var(L - wS) / Var(L)."""
    L = np.asarray(L_samples, dtype=float)
    S = np.asarray(S_samples, dtype=float)
    var_l = float(np.var(L))
    if var_l <= 0.0:
        raise ZeroUnhedgedVariance("unhedged liability has zero variance")
    return 1.0 - float(np.var(L - w * S)) / var_l


def hedge_from_scenarios(sset: ScenarioSet, cfg: HedgeConfig,
                         lives: Optional[np.ndarray] = None) -> HedgeResult:
    """Compute L, S, the optimal weight, and risk reduction for one set."""
    if lives is None:
        lives = sset.lives
    L = liability_pvs(lives, cfg)
    ref_q = sset.ref_q_cohort(cfg.annuity_start_age)
    forwards = np.mean(survivor_indices(ref_q), axis=0)
    S = swap_pvs(ref_q, forwards, cfg)
    w = optimal_weight(L, S)
    rr = risk_reduction(L, S, w)
    return HedgeResult(
        L_samples=L, S_samples=S, w=w, rr=rr,
        var_unhedged=float(np.var(L)),
        var_hedged=float(np.var(L - w * S)),
    )


def resimulate_lives(sset: ScenarioSet, book_size: int) -> np.ndarray:
    """Lives paths for a different portfolio size over the same scenarios.

    Each scenario draws from the dedicated substream
    child(master_seed, scenario, tag, book_size), independent of the
    stream that produced the stored paths.
    """
    q = sset.book_q_cohort(sset.config.annuity_start_age)
    s_count, h = q.shape
    out = np.empty((s_count, h + 1), dtype=np.uint32)
    for s in range(s_count):
        rng = child_stream(sset.config.master_seed, s, _LIVES_STREAM_TAG,
                           int(book_size))
        alive = int(book_size)
        out[s, 0] = alive
        for t in range(h):
            alive = int(rng.binomial(alive, 1.0 - q[s, t])) if alive > 0 else 0
            out[s, t + 1] = alive
    return out


REPORT_HEADER = ["model", "book_size", "w", "rr", "var_unhedged",
                 "var_hedged", "n_scenarios", "seed"]


@dataclass(frozen=True)
class HedgeReportRow:
    model: str
    book_size: int
    w: float
    rr: float
    var_unhedged: float
    var_hedged: float
    n_scenarios: int
    seed: int


def hedge_report(ref_panel: MortalityPanel, book_panel: MortalityPanel,
                 hedge_cfg: HedgeConfig,
                 scenario_cfgs: dict[str, ScenarioConfig],
                 scenario_sets: Optional[dict[str, ScenarioSet]] = None,
                 ) -> list[HedgeReportRow]:
    """Risk-reduction table over (model, book size) cells.

    One scenario set is generated per model; the book sizes reuse its rate
    scenarios with independently resimulated lives paths, which is what
    makes the size dimension isolate sampling risk.
    """
    rows: list[HedgeReportRow] = []
    for model_name, s_cfg in scenario_cfgs.items():
        if scenario_sets is not None and model_name in scenario_sets:
            sset = scenario_sets[model_name]
        else:
            sset = bootstrap_scenarios(ref_panel, book_panel, s_cfg)
        for size in hedge_cfg.book_sizes:
            lives = resimulate_lives(sset, size)
            result = hedge_from_scenarios(sset, hedge_cfg, lives=lives)
            rows.append(HedgeReportRow(
                model=model_name, book_size=int(size),
                w=result.w, rr=result.rr,
                var_unhedged=result.var_unhedged,
                var_hedged=result.var_hedged,
                n_scenarios=sset.n_scenarios,
                seed=int(sset.config.master_seed),
            ))
    return rows


def write_report_csv(path, rows: Sequence[HedgeReportRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for row in rows:
            writer.writerow([
                row.model, row.book_size, repr(row.w), repr(row.rr),
                repr(row.var_unhedged), repr(row.var_hedged),
                row.n_scenarios, row.seed,
            ])
