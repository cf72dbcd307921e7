"""Bayesian multi-metric interim decisions for multi-arm multi-stage trials."""

__version__ = "0.1.0"

from .decision import (  # noqa: E402
    DecisionPolicy,
    TppSpec,
    compute_probabilities,
    evaluate_interim,
    lack_of_benefit,
    ranking_probs,
    sequential_decision,
    tpp_decision,
)
from .dgm import (  # noqa: E402
    ConfigError,
    DesignSpec,
    LmmParams,
    WeibullSpec,
    calibrate_weibull,
    simulate_trial,
    take_interim_snapshot,
)
from .diagnostics import diagnose  # noqa: E402
from .harness import (  # noqa: E402
    RATE_SETTINGS,
    TTP_SETTINGS,
    ScenarioConfig,
    aggregate,
    expand_grid,
    run_replicate,
    run_scenario,
)
from .lmm import PriorSpec, SamplerConfig, derive_theta, fit, summarize  # noqa: E402

__all__ = [
    "ConfigError", "DecisionPolicy", "DesignSpec", "LmmParams", "PriorSpec", "RATE_SETTINGS",
    "SamplerConfig", "ScenarioConfig", "TTP_SETTINGS", "TppSpec", "WeibullSpec", "aggregate",
    "calibrate_weibull", "compute_probabilities", "derive_theta", "diagnose", "evaluate_interim",
    "expand_grid", "fit", "lack_of_benefit", "ranking_probs", "run_replicate", "run_scenario",
    "sequential_decision", "simulate_trial", "summarize", "take_interim_snapshot", "tpp_decision",
]
