"""Study configuration files (YAML or JSON) and their resolution to scenario configs.

Every recognised key with its default::

    seed: 20240101
    alpha: 0.05
    workers: 1
    out: null
    scenario: {ttp_setting: One Winner, theta: null, rate_setting: Mixed, rates: null, n_per_arm: 30}
    study: {ttp_settings: [...4 names], rate_settings: [...4 names], sample_sizes: [20, 30, 40],
            replicates: 1000}
    lmm: {beta0, beta1, sigma_g1, sigma_g2, rho, sigma_e}
    design: {duration, enrollment_rate, ttp_weeks, censor_limit_days, n_enrolled}
    weibull: {p, control_rate, frailty_sd}
    tpp: {theta_mav, theta_tv, tau_mav, tau_tv}
    policy: {unfavorable_threshold, ranking_cutoff, ranking_metric}
    sampler: {n_chains, n_iterations, n_warmup, thinning, rhat_threshold, min_ess, degenerate_limit}
    priors: {beta_mean, beta_sd, sigma_e2_shape, sigma_e2_scale, re_df, re_scale}

Unknown keys are rejected.  A manifest written by the CLI is also accepted;
its ``resolved_config`` section is used.
"""

from __future__ import annotations

import copy
import dataclasses
from pathlib import Path

import yaml

from .decision import DecisionPolicy, TppSpec
from .dgm import ConfigError, DesignSpec, LmmParams
from .harness import CONTROL_RATE, RATE_SETTINGS, SAMPLE_SIZES, TTP_SETTINGS, expand_grid
from .lmm import PriorSpec, SamplerConfig


def _defaults(cls, exclude=()):
    return {f.name: copy.deepcopy(f.default) if f.default is not dataclasses.MISSING
            else f.default_factory() for f in dataclasses.fields(cls) if f.name not in exclude}


def _list(v):
    return list(v) if isinstance(v, tuple) else v


DEFAULTS = {
    "seed": 20240101,
    "alpha": 0.05,
    "workers": 1,
    "out": None,
    "scenario": {"ttp_setting": "One Winner", "theta": None, "rate_setting": "Mixed",
                 "rates": None, "n_per_arm": 30},
    "study": {"ttp_settings": list(TTP_SETTINGS), "rate_settings": list(RATE_SETTINGS),
              "sample_sizes": list(SAMPLE_SIZES), "replicates": 1000},
    "lmm": {k: _list(v) for k, v in _defaults(LmmParams, ("beta_arm",)).items()},
    "design": {k: _list(v) for k, v in _defaults(DesignSpec, ("n_arms", "n_per_arm")).items()},
    "weibull": {"p": 0.425, "control_rate": CONTROL_RATE, "frailty_sd": 0.0},
    "tpp": _defaults(TppSpec),
    "policy": _defaults(DecisionPolicy),
    "sampler": _defaults(SamplerConfig, ("seed",)),
    "priors": {k: _list(v) for k, v in _defaults(PriorSpec).items()},
}
# the duration default depends on the arm count; resolved per scenario
DEFAULTS["design"]["duration"] = None


def _merge(defaults, given, prefix=""):
    if not isinstance(given, dict):
        raise ConfigError(prefix.rstrip(".") or "config", "expected a mapping")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"{prefix}{key}", "unknown key")
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value if value is not None else {}, f"{prefix}{key}.")
        else:
            out[key] = value
    return out


def load_config(path):
    """Read and resolve a config file; all defaults are materialised in the result."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from exc
    if isinstance(raw, dict) and "resolved_config" in raw:
        raw = raw["resolved_config"]
    return resolve(raw)


def resolve(raw):
    cfg = _merge(DEFAULTS, raw)
    # build one scenario now so value errors surface at load time
    try:
        scenario_configs(cfg, study=False)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from exc
    return cfg


def _section_error(section, exc):
    return ConfigError(f"{section}.{exc.key}", str(exc).split(": ", 1)[-1])


def _common(cfg):
    lmm = dict(cfg["lmm"])
    design = {k: v for k, v in cfg["design"].items() if v is not None}
    try:
        tpp = TppSpec(**cfg["tpp"])
    except ConfigError as exc:
        raise _section_error("tpp", exc) from exc
    try:
        policy = DecisionPolicy(**cfg["policy"])
    except ConfigError as exc:
        raise _section_error("policy", exc) from exc
    try:
        sampler = SamplerConfig(seed=int(cfg["seed"]), **cfg["sampler"])
    except ConfigError as exc:
        raise _section_error("sampler", exc) from exc
    try:
        priors = PriorSpec(**{k: tuple(v) if isinstance(v, list) else v
                              for k, v in cfg["priors"].items()})
    except ConfigError as exc:
        raise _section_error("priors", exc) from exc
    return dict(
        base_seed=int(cfg["seed"]), control_rate=cfg["weibull"]["control_rate"],
        lmm=lmm, design=design, weibull_p=cfg["weibull"]["p"],
        frailty_sd=cfg["weibull"]["frailty_sd"], tpp=tpp, policy=policy, sampler=sampler,
        priors=priors, alpha=cfg["alpha"],
    )


def _setting(name, values, table, key):
    if values is not None:
        return (name or "custom", tuple(values))
    if name not in table:
        raise ConfigError(key, f"unknown setting {name!r}; choose from {sorted(table)}")
    return name


def scenario_configs(cfg, study=True, replicates=None):
    """``ScenarioConfig`` list for the study grid, or the single configured scenario."""
    common = _common(cfg)
    try:
        if study:
            s = cfg["study"]
            common["replicates"] = int(replicates or s["replicates"])
            for key in ("ttp_settings", "rate_settings"):
                table = TTP_SETTINGS if key == "ttp_settings" else RATE_SETTINGS
                for item in s[key]:
                    if isinstance(item, str) and item not in table:
                        raise ConfigError(f"study.{key}", f"unknown setting {item!r}")
            return expand_grid(s["ttp_settings"], s["rate_settings"], s["sample_sizes"], **common)
        s = cfg["scenario"]
        ttp = _setting(s["ttp_setting"], s["theta"], TTP_SETTINGS, "scenario.ttp_setting")
        rate = _setting(s["rate_setting"], s["rates"], RATE_SETTINGS, "scenario.rate_setting")
        common["replicates"] = int(replicates or 1)
        return expand_grid([ttp], [rate], [int(s["n_per_arm"])], **common)
    except ConfigError as exc:
        if "." in exc.key:
            raise
        section = "lmm" if exc.key in cfg["lmm"] or exc.key == "beta_arm" else (
            "design" if exc.key in cfg["design"] or exc.key in ("n_arms", "n_per_arm") else
            "weibull" if exc.key in ("p", "frailty_sd", "target_rate", "rates", "horizon") else
            "scenario"
        )
        raise _section_error(section, exc) from exc
