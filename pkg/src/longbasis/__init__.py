"""Two-population stochastic mortality modelling and longevity basis risk.

Pipeline: load deaths/exposures panels, fit the reference Lee-Carter model,
calibrate renewal-jump dynamics on its period index, fit relative book
models (selected by BIC), generate bootstrap scenario sets, and measure
index-swap hedge effectiveness.
"""

from .panels import (
    AlignedPair,
    MortalityPanel,
    PopulationTag,
    RateKind,
    RateSurface,
    align_panels,
    central_rates,
    load_panel,
    m_from_q,
    q_from_m,
)
from .leecarter import FitMethod, LCFit, LCParams, apply_constraints, fit_lc
from .renewal import RenewalFamily, RenewalLaw, renewal_jump_probabilities
from .jumpdiffusion import (
    CalibrationResult,
    JumpDiffusionParams,
    calibrate,
    conditional_increment_density,
    increment_density,
    increment_log_likelihood,
    project_rates,
    simulate_k,
)
from .bookmodels import (
    AR1Params,
    BookFamily,
    BookModelFit,
    bic,
    bic_value,
    book_rates,
    fit_ar1,
    fit_book,
    project_book_k,
    select_model,
)
from .altmodels import (
    LCCohortsFit,
    ZhouStyleParams,
    fit_lc_cohorts,
    fit_zhou,
    simulate_zhou,
)
from .engine import (
    ModelChoice,
    ScenarioConfig,
    ScenarioSet,
    bootstrap_scenarios,
    load_scenarios,
    save_scenarios,
    simulate_lives,
)
from .hedge import (
    HedgeConfig,
    HedgeResult,
    forward_survivor_index,
    hedge_from_scenarios,
    hedge_report,
    liability_pv,
    optimal_weight,
    risk_reduction,
    survivor_index,
    swap_pv,
)

__version__ = "0.1.0"
