"""Command-line front-end: ingest -> fit -> calibrate-jumps -> fit-book ->
compare -> simulate -> hedge -> report -> validate.

Every command is a pure function of (config file, input files): re-running
with the same inputs reproduces outputs byte for byte.  Failures print a
machine-readable JSON object on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import altmodels, bookmodels, engine, hedge, jumpdiffusion, leecarter
from .bookmodels import fit_ar1, fit_book
from .config import RunConfig, load_run_config
from .engine import ModelChoice, ScenarioConfig, bootstrap_scenarios, load_scenarios, save_scenarios
from .errors import ConfigError, LongbasisError, PipelineError
from .hedge import HedgeConfig, hedge_from_scenarios, resimulate_lives, write_report_csv, HedgeReportRow, REPORT_HEADER
from .leecarter import FitMethod, fit_lc
from .panels import PopulationTag, central_rates, load_panel, q_from_m, write_panel_csv

log = logging.getLogger("longbasis")


def _setup_logging(level: str) -> None:
    env = os.environ.get("LONGBASIS_LOG")
    chosen = (env or level or "info").upper()
    logging.basicConfig(level=getattr(logging, chosen, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_panels(cfg: RunConfig):
    ref = load_panel(cfg.reference_csv, PopulationTag.REFERENCE,
                     age_filter=cfg.age_range, year_filter=cfg.reference_years)
    book = load_panel(cfg.book_csv, PopulationTag.BOOK,
                      age_filter=cfg.age_range, year_filter=cfg.book_years)
    return ref, book


def cmd_ingest(cfg: RunConfig) -> int:
    ref, book = _load_panels(cfg)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_panel_csv(out / "panels_normalized.csv", [ref, book])
    summary = {
        "reference": {"ages": [int(ref.ages[0]), int(ref.ages[-1])],
                      "years": [int(ref.years[0]), int(ref.years[-1])],
                      "cells": int(ref.deaths.size),
                      "total_deaths": float(ref.deaths.sum())},
        "book": {"ages": [int(book.ages[0]), int(book.ages[-1])],
                 "years": [int(book.years[0]), int(book.years[-1])],
                 "cells": int(book.deaths.size),
                 "total_deaths": float(book.deaths.sum())},
    }
    with open(out / "ingest_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("ingest: wrote %s", out / "panels_normalized.csv")
    return 0


def _fit_reference(cfg: RunConfig):
    ref, book = _load_panels(cfg)
    fit = fit_lc(ref, FitMethod.POISSON_MLE)
    return ref, book, fit


def cmd_fit(cfg: RunConfig) -> int:
    _, _, fit = _fit_reference(cfg)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    leecarter.export_params(cfg.out_dir / "reference_lc_params.csv", fit.params,
                            extra={"loglik": fit.loglik, "deviance": fit.deviance})
    log.info("fit: loglik=%.6f deviance=%.6f iterations=%d",
             fit.loglik, fit.deviance, fit.iterations)
    return 0


def cmd_calibrate_jumps(cfg: RunConfig) -> int:
    _, _, fit = _fit_reference(cfg)
    result = jumpdiffusion.calibrate(
        fit.params.k, cfg.scenario.renewal_family,
        starts=cfg.scenario.calibration_starts,
        n_max=cfg.scenario.renewal_n_max)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    jumpdiffusion.export_params(cfg.out_dir / "jump_params.csv", result.params,
                                result.family, loglik=result.loglik)
    log.info("calibrate-jumps: loglik=%.6f converged=%s weak_identification=%s",
             result.loglik, result.converged, result.weak_identification)
    return 0


def cmd_fit_book(cfg: RunConfig) -> int:
    _, book, fit = _fit_reference(cfg)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    fits = []
    for family in cfg.book_families:
        bfit = fit_book(family, fit.params, book)
        fits.append(bfit)
        bookmodels.export_fit(
            cfg.out_dir / f"book_{family.value}_params.csv", bfit)
        rows.append((family.value, bfit.loglik, bfit.n_params, bfit.bic))
    best = bookmodels.select_model(fits)
    with open(cfg.out_dir / "book_bic_table.csv", "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["family", "loglik", "n_params", "bic", "selected"])
        for family, ll, n_p, bic in rows:
            writer.writerow([family, repr(ll), n_p, repr(bic),
                             int(family == best.family.value)])
    log.info("fit-book: selected %s (bic=%.2f)", best.family.value, best.bic)
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    ref, book = _load_panels(cfg)
    sset = bootstrap_scenarios(ref, book, cfg.scenario)
    out = cfg.out_dir / "scenarios"
    save_scenarios(sset, out)
    log.info("simulate: %d scenarios -> %s (redrawn %d)",
             sset.n_scenarios, out, sset.n_redrawn)
    return 0


def cmd_hedge(cfg: RunConfig, scenarios_dir=None) -> int:
    src = Path(scenarios_dir) if scenarios_dir else cfg.out_dir / "scenarios"
    sset = load_scenarios(src)
    rows = []
    for size in cfg.hedge.book_sizes:
        lives = resimulate_lives(sset, size)
        res = hedge_from_scenarios(sset, cfg.hedge, lives=lives)
        rows.append(HedgeReportRow(
            model=sset.config.model_choice.value, book_size=size,
            w=res.w, rr=res.rr, var_unhedged=res.var_unhedged,
            var_hedged=res.var_hedged, n_scenarios=sset.n_scenarios,
            seed=int(sset.config.master_seed)))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv(cfg.out_dir / "hedge_report.csv", rows)
    for row in rows:
        log.info("hedge: %s l65=%d rr=%.4f w=%.2f",
                 row.model, row.book_size, row.rr, row.w)
    return 0


def cmd_compare(cfg: RunConfig) -> int:
    ref, book = _load_panels(cfg)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)

    fit = fit_lc(ref, FitMethod.POISSON_MLE)
    fits = [fit_book(f, fit.params, book) for f in cfg.book_families]
    best = bookmodels.select_model(fits)
    with open(cfg.out_dir / "compare_bic.csv", "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["family", "loglik", "n_params", "bic", "selected"])
        for bfit in fits:
            writer.writerow([bfit.family.value, repr(bfit.loglik),
                             bfit.n_params, repr(bfit.bic),
                             int(bfit.family == best.family)])

    rows: list[HedgeReportRow] = []
    for model in cfg.compare_models:
        s_cfg = ScenarioConfig.from_json_dict(
            {**cfg.scenario.to_json_dict(), "model_choice": model.value})
        sset = bootstrap_scenarios(ref, book, s_cfg)
        for size in cfg.hedge.book_sizes:
            lives = resimulate_lives(sset, size)
            res = hedge_from_scenarios(sset, cfg.hedge, lives=lives)
            rows.append(HedgeReportRow(
                model=model.value, book_size=size, w=res.w, rr=res.rr,
                var_unhedged=res.var_unhedged, var_hedged=res.var_hedged,
                n_scenarios=sset.n_scenarios,
                seed=int(s_cfg.master_seed)))
    write_report_csv(cfg.out_dir / "compare_risk_reduction.csv", rows)
    log.info("compare: BIC best=%s; %d risk-reduction cells",
             best.family.value, len(rows))
    return 0


def cmd_report(cfg: RunConfig, scenarios_dir=None, emit_plot_data=False) -> int:
    src = Path(scenarios_dir) if scenarios_dir else cfg.out_dir / "scenarios"
    sset = load_scenarios(src)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    lives = resimulate_lives(sset, sset.config.book_size_l65)
    res = hedge_from_scenarios(sset, cfg.hedge, lives=lives)
    write_report_csv(cfg.out_dir / "report.csv", [HedgeReportRow(
        model=sset.config.model_choice.value,
        book_size=sset.config.book_size_l65,
        w=res.w, rr=res.rr, var_unhedged=res.var_unhedged,
        var_hedged=res.var_hedged, n_scenarios=sset.n_scenarios,
        seed=int(sset.config.master_seed))])
    if emit_plot_data:
        age_i = int(np.searchsorted(sset.ages, cfg.hedge.annuity_start_age))
        m_at_age = sset.ref_m[:, age_i, :]
        percentiles = [10, 25, 50, 75, 90]
        fan = np.percentile(m_at_age, percentiles, axis=0)
        with open(cfg.out_dir / "fan_reference_m.csv", "w", encoding="utf-8",
                  newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["year"] + [f"p{p}" for p in percentiles])
            for j, year in enumerate(sset.future_years):
                writer.writerow([int(year)] + [repr(float(v))
                                               for v in fan[:, j]])
        log.info("report: wrote plot data for age %d",
                 cfg.hedge.annuity_start_age)
    log.info("report: rr=%.4f w=%.2f", res.rr, res.w)
    return 0


def cmd_validate(cfg: RunConfig) -> int:
    """Run the data-facing invariant suite; exit nonzero on any failure."""
    checks: list[tuple[str, bool]] = []
    ref, book = _load_panels(cfg)

    m_ref = central_rates(ref, floor_rate=cfg.floor_rate)
    recomputed = ref.deaths / ref.exposures
    checks.append(("central_rates_match_recompute",
                   bool(np.max(np.abs(np.maximum(recomputed, cfg.floor_rate)
                                      - m_ref.values)) <= 1e-12)))

    q = q_from_m(m_ref)
    from .panels import m_from_q
    checks.append(("q_m_roundtrip",
                   bool(np.max(np.abs(m_from_q(q).values - m_ref.values)) <= 1e-12)))

    fit = fit_lc(ref, FitMethod.POISSON_MLE)
    checks.append(("lc_constraint_sum_b",
                   bool(abs(fit.params.b.sum() - 1.0) <= 1e-10)))
    checks.append(("lc_constraint_sum_k",
                   bool(abs(fit.params.k.sum()) <= 1e-8 * max(1.0, np.abs(fit.params.k).max()))))
    svd_fit = fit_lc(ref, FitMethod.SVD)
    checks.append(("poisson_beats_svd", bool(fit.loglik >= svd_fit.loglik - 1e-9)))

    bfit = fit_book(cfg.scenario.book_family, fit.params, book)
    checks.append(("book_constraint_sum_k",
                   bool(abs(bfit.k.sum()) <= 1e-8 * max(1.0, np.abs(bfit.k).max() if bfit.k is not None else 1.0))))
    ar = fit_ar1(bfit.k)
    checks.append(("book_ar1_finite", bool(np.isfinite(ar.psi0) and np.isfinite(ar.psi1))))

    ok = all(passed for _, passed in checks)
    for name, passed in checks:
        print(f"{'PASS' if passed else 'FAIL'} {name}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="longbasis",
        description="Two-population mortality modelling and longevity "
                    "basis-risk toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("ingest", "fit", "calibrate-jumps", "fit-book", "compare",
                 "simulate", "hedge", "report", "validate"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--seed", type=int, default=None,
                       help="override scenario.master_seed")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--floor-rate", type=float, default=None)
        p.add_argument("--no-resample", action="store_true",
                       help="diagnostic: skip bootstrap resampling/refits")
        if name in ("hedge", "report"):
            p.add_argument("--scenarios", default=None,
                           help="scenario directory (default <out>/scenarios)")
        if name == "report":
            p.add_argument("--emit-plot-data", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config, overrides={
            "seed": args.seed, "threads": args.threads, "out": args.out,
            "floor_rate": args.floor_rate, "no_resample": args.no_resample,
        })
        _setup_logging(cfg.log_level)
        stage = args.command
        try:
            if stage == "ingest":
                return cmd_ingest(cfg)
            if stage == "fit":
                return cmd_fit(cfg)
            if stage == "calibrate-jumps":
                return cmd_calibrate_jumps(cfg)
            if stage == "fit-book":
                return cmd_fit_book(cfg)
            if stage == "compare":
                return cmd_compare(cfg)
            if stage == "simulate":
                return cmd_simulate(cfg)
            if stage == "hedge":
                return cmd_hedge(cfg, scenarios_dir=args.scenarios)
            if stage == "report":
                return cmd_report(cfg, scenarios_dir=args.scenarios,
                                  emit_plot_data=args.emit_plot_data)
            if stage == "validate":
                return cmd_validate(cfg)
            raise ConfigError(f"unknown command {stage}")
        except LongbasisError as exc:
            raise PipelineError(stage, exc) from exc
    except PipelineError as exc:
        print(json.dumps({"error": type(exc.cause).__name__,
                          "stage": exc.stage, "message": str(exc.cause)}),
              file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(json.dumps({"error": "ConfigError", "stage": "config",
                          "message": str(exc)}), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
