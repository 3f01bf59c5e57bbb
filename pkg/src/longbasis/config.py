"""Run configuration: one JSON file drives the whole pipeline.

Everything that affects numbers lives in the file (explicitly seeded);
command-line flags may override individual entries but there are no
wall-clock or host-dependent defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .bookmodels import BookFamily
from .engine import ModelChoice, ScenarioConfig
from .errors import ConfigError
from .hedge import HedgeConfig


@dataclass(frozen=True)
class RunConfig:
    reference_csv: Path
    book_csv: Path
    out_dir: Path
    scenario: ScenarioConfig
    hedge: HedgeConfig
    age_range: Optional[range] = None
    reference_years: Optional[range] = None
    book_years: Optional[range] = None
    floor_rate: float = 1e-10
    book_families: tuple[BookFamily, ...] = (
        BookFamily.REL_LC, BookFamily.CAE, BookFamily.APC, BookFamily.CBD)
    compare_models: tuple[ModelChoice, ...] = (
        ModelChoice.RENEWAL_JUMP_CAE, ModelChoice.ZHOU_JUMPS,
        ModelChoice.LC_COHORTS)
    log_level: str = "info"


def _as_range(value, what: str) -> Optional[range]:
    if value is None:
        return None
    try:
        lo, hi = int(value[0]), int(value[1])
    except (TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"{what} must be a [lo, hi] pair: {exc}") from None
    if hi < lo:
        raise ConfigError(f"{what}: upper bound {hi} below lower bound {lo}")
    return range(lo, hi + 1)


def load_run_config(path, overrides: Optional[dict] = None) -> RunConfig:
    """Parse and validate the pipeline configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    overrides = overrides or {}

    scenario_raw = dict(raw.get("scenario", {}))
    if "master_seed" not in scenario_raw and overrides.get("seed") is None:
        raise ConfigError(
            "scenario.master_seed must be set explicitly (no implicit seeding)"
        )
    if "seed" in overrides and overrides["seed"] is not None:
        scenario_raw["master_seed"] = int(overrides["seed"])
    if "threads" in overrides and overrides["threads"] is not None:
        scenario_raw["threads"] = int(overrides["threads"])
    if overrides.get("no_resample"):
        scenario_raw["resample"] = False
    if "floor_rate" in overrides and overrides["floor_rate"] is not None:
        raw["floor_rate"] = float(overrides["floor_rate"])
    renewal_raw = raw.get("renewal", {})
    if "family" in renewal_raw:
        scenario_raw.setdefault("renewal_family", renewal_raw["family"])
    if "n_max" in renewal_raw:
        scenario_raw.setdefault("renewal_n_max", int(renewal_raw["n_max"]))
    if "jump_persistence" in raw:
        scenario_raw.setdefault("jump_persistence", raw["jump_persistence"])
    if "optimizer" in raw and "starts" in raw["optimizer"]:
        scenario_raw.setdefault("calibration_starts", int(raw["optimizer"]["starts"]))

    try:
        scenario = ScenarioConfig.from_json_dict(scenario_raw)
    except Exception as exc:
        raise ConfigError(f"invalid scenario block: {exc}") from None

    hedge_raw = dict(raw.get("hedge", {}))
    hedge_raw.setdefault("horizon", raw.get("hedge", {}).get(
        "liability_horizon", scenario.horizon))
    hedge_raw.pop("liability_horizon", None)
    try:
        hedge = HedgeConfig(**{k: v for k, v in hedge_raw.items()
                               if k in HedgeConfig.__dataclass_fields__})
    except Exception as exc:
        raise ConfigError(f"invalid hedge block: {exc}") from None

    for key in ("reference_csv", "book_csv"):
        if key not in raw:
            raise ConfigError(f"config key '{key}' is required")

    base_dir = path.parent
    ref_csv = (base_dir / raw["reference_csv"]).resolve()
    book_csv = (base_dir / raw["book_csv"]).resolve()
    for p in (ref_csv, book_csv):
        if not p.exists():
            raise ConfigError(f"input file {p} does not exist")
    out_dir = Path(overrides.get("out") or raw.get("out_dir", "out"))
    if not out_dir.is_absolute():
        out_dir = base_dir / out_dir

    families = tuple(BookFamily(f) for f in raw.get(
        "book", {}).get("families", ("rel_lc", "cae", "apc", "cbd")))
    models = tuple(ModelChoice(m) for m in raw.get(
        "compare", {}).get("models",
                           ("renewal_jump_cae", "zhou_jumps", "lc_cohorts")))

    return RunConfig(
        reference_csv=ref_csv,
        book_csv=book_csv,
        out_dir=out_dir,
        scenario=scenario,
        hedge=hedge,
        age_range=_as_range(raw.get("age_range"), "age_range"),
        reference_years=_as_range(raw.get("reference_years"), "reference_years"),
        book_years=_as_range(raw.get("book_years"), "book_years"),
        floor_rate=float(raw.get("floor_rate", 1e-10)),
        book_families=families,
        compare_models=models,
        log_level=str(raw.get("log_level", "info")),
    )
