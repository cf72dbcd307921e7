"""Scenario grid, replicate execution and operating characteristics."""

from __future__ import annotations

import hashlib
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .decision import CONTINUE, GO, NO_GO, STOP, DecisionPolicy, TppSpec, evaluate_interim
from .dgm import ConfigError, DesignSpec, LmmParams, WeibullSpec, simulate_trial, take_interim_snapshot
from .lmm import PriorSpec, SamplerConfig, fit

TTP_SETTINGS = {
    "No Winners": (0.0, 0.0, 0.0, 0.0),
    "One Winner": (10.0, 20.0, 30.0, 40.0),
    "Two Winners": (-10.0, 10.0, 35.0, 40.0),
    "Four Winners": (35.0, 37.0, 39.0, 41.0),
}
RATE_SETTINGS = {
    "All Minimal": (0.05, 0.05, 0.05, 0.05),
    "All Desirable": (0.025, 0.025, 0.025, 0.025),
    "All Suboptimal": (0.10, 0.10, 0.10, 0.10),
    "Mixed": (0.10, 0.05, 0.05, 0.025),
}
CONTROL_RATE = 0.05
SAMPLE_SIZES = (20, 30, 40)
RATE_CLASSES = {0.025: "desirable", 0.05: "minimal", 0.10: "suboptimal"}


@dataclass(frozen=True)
class ScenarioConfig:
    ttp_setting: str
    theta: tuple
    rate_setting: str
    rates: tuple
    n_per_arm: int
    replicates: int = 1000
    base_seed: int = 20240101
    control_rate: float = CONTROL_RATE
    lmm: dict = field(default_factory=dict)
    design: dict = field(default_factory=dict)
    weibull_p: float = 0.425
    frailty_sd: float = 0.0
    tpp: TppSpec = field(default_factory=TppSpec)
    policy: DecisionPolicy = field(default_factory=DecisionPolicy)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    priors: PriorSpec = field(default_factory=PriorSpec)
    alpha: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if len(self.theta) != len(self.rates):
            raise ConfigError("theta", "theta and rate vectors must have equal length")
        if self.replicates < 1:
            raise ConfigError("replicates", "must be >= 1")
        # validate eagerly so bad configs fail before any replicate runs
        self.design_spec()
        self.lmm_params()
        self.weibull_spec()

    @property
    def scenario_id(self):
        return f"{self.ttp_setting}|{self.rate_setting}|n={self.n_per_arm}"

    @property
    def n_arms(self):
        return len(self.theta) + 1

    @property
    def seed(self):
        """Scenario seed derived from the base seed and the scenario identity."""
        digest = hashlib.sha256(f"{self.base_seed}:{self.scenario_id}".encode()).digest()
        return int.from_bytes(digest[:8], "little")

    def design_spec(self):
        kw = dict(n_arms=self.n_arms, n_per_arm=self.n_per_arm)
        if "duration" not in self.design:
            kw["duration"] = (26,) + (16,) * (self.n_arms - 1)
        kw.update(self.design)
        return DesignSpec(**kw)

    def lmm_params(self):
        return LmmParams.from_theta(self.theta, **self.lmm)

    def weibull_spec(self):
        return WeibullSpec.calibrated(
            (self.control_rate,) + self.rates, self.design_spec(), p=self.weibull_p,
            frailty_sd=self.frailty_sd,
        )

    def replicate_seed(self, index):
        return np.random.SeedSequence(self.seed, spawn_key=(int(index),))

    def to_dict(self):
        return asdict(self)


def expand_grid(ttp_settings, rate_settings, sample_sizes, **common):
    """Every combination of TTP setting x rate setting x sample size.

    Settings are names from the standard tables or ``(name, values)`` pairs.
    """
    if not ttp_settings or not rate_settings or not sample_sizes:
        raise ValueError("setting lists must be non-empty")

    def resolve(item, table):
        if isinstance(item, str):
            if item not in table:
                raise ConfigError("setting", f"unknown setting {item!r}")
            return item, table[item]
        name, values = item
        return name, tuple(values)

    ttp = [resolve(s, TTP_SETTINGS) for s in ttp_settings]
    rate = [resolve(s, RATE_SETTINGS) for s in rate_settings]
    return [
        ScenarioConfig(ttp_setting=tn, theta=tv, rate_setting=rn, rates=rv, n_per_arm=n, **common)
        for (tn, tv), (rn, rv), n in itertools.product(ttp, rate, sample_sizes)
    ]


@dataclass(frozen=True)
class ReplicateRecord:
    scenario_id: str
    replicate: int
    events: tuple
    theta_median: tuple
    ci_low: tuple
    ci_high: tuple
    p_mav: tuple
    p_tv: tuple
    tpp: tuple
    psi1: tuple
    psi2: tuple  # all arms, control first
    psi3: tuple
    final: tuple
    reason: tuple
    converged: bool
    max_rhat: float
    min_ess: float
    flags: tuple


def run_replicate(config, index):
    """Simulate, snapshot, fit and decide for one replicate; deterministic in (config, index)."""
    data_seed, fit_seed = config.replicate_seed(index).spawn(2)
    design = config.design_spec()
    dataset = simulate_trial(config.lmm_params(), config.weibull_spec(), design, data_seed)
    snapshot = take_interim_snapshot(dataset)
    draws, diagnostics = fit(snapshot, config.priors, config.sampler, seed=fit_seed)
    flags = list(draws.flags)
    if not diagnostics.converged:
        flags.append("not_converged")
    _, rows = evaluate_interim(snapshot, draws, config.tpp, config.policy, config.alpha)
    novel = rows[1:]
    return ReplicateRecord(
        scenario_id=config.scenario_id,
        replicate=int(index),
        events=tuple(r.events for r in rows),
        theta_median=tuple(r.theta_median for r in novel),
        ci_low=tuple(r.ci_low for r in novel),
        ci_high=tuple(r.ci_high for r in novel),
        p_mav=tuple(r.p_mav for r in novel),
        p_tv=tuple(r.p_tv for r in novel),
        tpp=tuple(r.tpp_decision for r in novel),
        psi1=tuple(r.psi1 for r in novel),
        psi2=tuple(r.psi2 for r in rows),
        psi3=tuple(r.psi3 for r in rows),
        final=tuple(r.final_decision for r in novel),
        reason=tuple(r.reason for r in novel),
        converged=diagnostics.converged,
        max_rhat=diagnostics.max_rhat,
        min_ess=diagnostics.min_ess_observed,
        flags=tuple(flags),
    )


def _run_one(args):
    config, index = args
    return run_replicate(config, index)


def run_scenario(config, workers=1, replicates=None, progress=None):
    """All replicates of one scenario, sorted by replicate index."""
    n = config.replicates if replicates is None else replicates
    jobs = [(config, i) for i in range(n)]
    if workers <= 1:
        records = []
        for job in jobs:
            records.append(_run_one(job))
            if progress:
                progress(len(records), n)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_one, jobs, chunksize=max(1, n // (4 * workers))))
    return sorted(records, key=lambda r: r.replicate)


def mcse(p, n):
    return float(np.sqrt(p * (1.0 - p) / n))


def _rank_roles(theta):
    """Indices (into novel arms) of the true best and second-best arm; ties to lowest index."""
    order = np.argsort(-np.asarray(theta), kind="stable")
    return int(order[0]), int(order[1]) if len(order) > 1 else None


@dataclass(frozen=True)
class OperatingCharacteristics:
    scenario_id: str
    n_replicates: int
    rows: tuple  # one dict per novel arm
    summary: dict


def aggregate(records, config):
    """Decision proportions, error rates and ranking summaries over replicates.

    Records are sorted by replicate index first, so the result does not depend
    on the order in which replicates completed.
    """
    records = sorted(records, key=lambda r: r.replicate)
    R = len(records)
    if R == 0:
        raise ValueError("no replicate records")
    final = np.array([r.final for r in records])
    tpp = np.array([r.tpp for r in records])
    events = np.array([r.events for r in records])
    med = np.array([r.theta_median for r in records], dtype=float)
    psi2 = np.array([r.psi2 for r in records], dtype=float)
    psi3 = np.array([r.psi3 for r in records], dtype=float)
    reasons = np.array([r.reason for r in records])
    M = config.policy.unfavorable_threshold

    rows = []
    for j in range(config.n_arms - 1):
        rate = config.rates[j]
        truth = RATE_CLASSES.get(round(rate, 6), "other")
        row = {
            "scenario_id": config.scenario_id,
            "ttp_setting": config.ttp_setting,
            "rate_setting": config.rate_setting,
            "n_per_arm": config.n_per_arm,
            "arm": j + 2,
            "theta_true": config.theta[j],
            "rate_true": rate,
            "rate_class": truth,
        }
        for label, arr, values in (
            ("final", final[:, j], (GO, CONTINUE, STOP)),
            ("tpp", tpp[:, j], (GO, CONTINUE, NO_GO)),
        ):
            for v in values:
                p = float(np.mean(arr == v))
                key = f"{label}_{v.lower().replace('-', '_')}"
                row[key] = p
                row[f"{key}_mcse"] = mcse(p, R)
        lob = float(np.mean(events[:, j + 1] >= M))
        row["lack_of_benefit"] = lob
        row["lack_of_benefit_mcse"] = mcse(lob, R)
        for reason in ("lack_of_benefit", "tpp_no_go", "lack_of_benefit+tpp_no_go"):
            row[f"stop_{reason.replace('+', '_and_')}"] = float(np.mean(reasons[:, j] == reason))
        row["false_go"] = row["final_go"] if truth == "suboptimal" else float("nan")
        row["false_no_go"] = row["final_stop"] if truth == "desirable" else float("nan")
        row["theta_median_mean"] = float(np.mean(med[:, j]))
        row["theta_median_mcse"] = float(np.std(med[:, j], ddof=1) / np.sqrt(R)) if R > 1 else float("nan")
        row["psi2_median"] = float(np.median(psi2[:, j + 1]))
        row["psi3_median"] = float(np.median(psi3[:, j + 1]))
        rows.append(row)

    best, second = _rank_roles(config.theta)
    summary = {
        "scenario_id": config.scenario_id,
        "n_replicates": R,
        "convergence_rate": float(np.mean([r.converged for r in records])),
        "flagged_replicates": [r.replicate for r in records if r.flags],
    }
    if second is not None:
        sep = psi2[:, best + 1] - psi2[:, second + 1]
        summary.update(
            best_arm=best + 2,
            second_arm=second + 2,
            psi2_best_median=float(np.median(psi2[:, best + 1])),
            psi2_second_median=float(np.median(psi2[:, second + 1])),
            ranking_separation_mean=float(np.mean(sep)),
            ranking_separation_median=float(np.median(sep)),
        )
    return OperatingCharacteristics(
        scenario_id=config.scenario_id, n_replicates=R, rows=tuple(rows), summary=summary
    )
