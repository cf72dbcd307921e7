"""Trial data-generating mechanism.

Simulates a multi-arm trial: a permuted-block enrollment calendar, weekly
log10(TTP) series from a linear mixed model with correlated random intercepts
and slopes, and Weibull proportional-hazards times to unfavorable outcome
measured from the end of treatment.  Arms are indexed from 0, with arm 0 the
control; exported files use 1-based arm labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

WEIBULL_SHAPE = 0.425
FOLLOW_UP_WEEKS = 52


class ConfigError(ValueError):
    """Invalid configuration value.  ``key`` names the offending field."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


def _as_tuple(values):
    return tuple(float(v) for v in np.atleast_1d(values))


@dataclass(frozen=True)
class LmmParams:
    """Linear mixed model for log10(TTP) by week since randomization.

    The defaults are engine defaults, not values taken from any trial: a
    baseline near 8 days (0.9 on the log10 scale) rising 0.06 log10-days per
    week in the control arm.
    """

    beta0: float = 0.9
    beta1: float = 0.06
    beta_arm: tuple = (0.0, 0.0, 0.0, 0.0)
    sigma_g1: float = 0.2
    sigma_g2: float = 0.02
    rho: float = 0.3
    sigma_e: float = 0.15

    def __post_init__(self):
        object.__setattr__(self, "beta_arm", _as_tuple(self.beta_arm))
        for name in ("sigma_g1", "sigma_g2"):
            if not getattr(self, name) >= 0:
                raise ConfigError(name, "must be >= 0")
        if not self.sigma_e > 0:
            raise ConfigError("sigma_e", "must be > 0")
        # |rho| <= 1 with non-negative SDs is exactly the PSD condition for 2x2
        if not abs(self.rho) <= 1:
            raise ConfigError("rho", "must lie in [-1, 1]")

    @classmethod
    def from_theta(cls, theta, **kwargs):
        """Build parameters whose arm slopes differ from control by ``theta`` percent."""
        beta1 = kwargs.get("beta1", cls.beta1)
        beta_arm = tuple(t / 100.0 * beta1 for t in theta)
        return cls(beta_arm=beta_arm, **kwargs)

    @property
    def theta(self):
        return tuple(100.0 * b / self.beta1 for b in self.beta_arm)

    @property
    def random_effects_cov(self):
        c = self.rho * self.sigma_g1 * self.sigma_g2
        return np.array([[self.sigma_g1**2, c], [c, self.sigma_g2**2]])


@dataclass(frozen=True)
class DesignSpec:
    n_arms: int = 5
    n_per_arm: int = 30
    duration: tuple = (26, 16, 16, 16, 16)
    enrollment_rate: int = 10
    ttp_weeks: int = 8
    censor_limit_days: float = 42.0
    # patients enrolled in total; None stops enrollment at the interim sample size
    n_enrolled: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "duration", _as_tuple(self.duration))
        if self.n_arms < 2:
            raise ConfigError("n_arms", "need a control and at least one novel arm")
        if self.n_per_arm < 1:
            raise ConfigError("n_per_arm", "must be >= 1")
        if len(self.duration) != self.n_arms:
            raise ConfigError("duration", f"expected {self.n_arms} values")
        if any(not 0 < d < FOLLOW_UP_WEEKS for d in self.duration):
            raise ConfigError("duration", f"each must lie in (0, {FOLLOW_UP_WEEKS})")
        if int(self.enrollment_rate) != self.enrollment_rate or self.enrollment_rate < 1:
            raise ConfigError("enrollment_rate", "must be a positive integer")
        if self.ttp_weeks < 1:
            raise ConfigError("ttp_weeks", "must be >= 1")
        if not self.censor_limit_days > 0:
            raise ConfigError("censor_limit_days", "must be > 0")
        if self.n_enrolled is not None and self.n_enrolled < self.n_interim:
            raise ConfigError("n_enrolled", "must cover the interim sample size")

    @property
    def n_interim(self):
        return self.n_per_arm * self.n_arms

    @property
    def n_total(self):
        return self.n_interim if self.n_enrolled is None else self.n_enrolled

    @property
    def censor_limit(self):
        return math.log10(self.censor_limit_days)

    @property
    def horizon(self):
        return tuple(FOLLOW_UP_WEEKS - d for d in self.duration)


def calibrate_weibull(p, target_rate, horizon):
    """Log-hazard intercept giving ``target_rate`` events by ``horizon`` weeks.

    Survival is ``exp(-exp(gamma) * t**p)``, so the solution is closed form.
    """
    if not 0 < target_rate < 1:
        raise ConfigError("target_rate", "must lie in (0, 1)")
    if not horizon > 0:
        raise ConfigError("horizon", "must be > 0")
    if not p > 0:
        raise ConfigError("p", "must be > 0")
    return math.log(-math.log1p(-target_rate)) - p * math.log(horizon)


def weibull_survival(t, p, gamma):
    return np.exp(-np.exp(gamma) * np.asarray(t, dtype=float) ** p)


def weibull_inverse_cdf(u, p, gamma):
    """Event time with survival probability ``u``: ``(-ln u / e^gamma)^(1/p)``."""
    return (-np.log(u) / np.exp(gamma)) ** (1.0 / p)


@dataclass(frozen=True)
class WeibullSpec:
    p: float
    gamma: tuple
    horizon: tuple
    frailty_sd: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "gamma", _as_tuple(self.gamma))
        object.__setattr__(self, "horizon", _as_tuple(self.horizon))
        if not self.p > 0:
            raise ConfigError("p", "must be > 0")
        if len(self.gamma) != len(self.horizon):
            raise ConfigError("gamma", "one value per arm required")
        if any(h <= 0 for h in self.horizon):
            raise ConfigError("horizon", "must be > 0")
        if not self.frailty_sd >= 0:
            raise ConfigError("frailty_sd", "must be >= 0")

    @classmethod
    def calibrated(cls, rates, design, p=WEIBULL_SHAPE, frailty_sd=0.0):
        """One calibrated intercept per arm; ``rates[0]`` is the control rate."""
        if len(rates) != design.n_arms:
            raise ConfigError("rates", f"expected {design.n_arms} values")
        gamma = [calibrate_weibull(p, r, h) for r, h in zip(rates, design.horizon)]
        return cls(p=p, gamma=gamma, horizon=design.horizon, frailty_sd=frailty_sd)

    def rate_at_horizon(self, arm):
        return 1.0 - float(weibull_survival(self.horizon[arm], self.p, self.gamma[arm]))


@dataclass(frozen=True)
class Enrollment:
    arm: np.ndarray
    rand_week: np.ndarray


def assign_enrollment(design, rng):
    """Permuted blocks of size ``n_arms``; ``enrollment_rate`` patients per week from week 1."""
    n = design.n_total
    n_blocks = -(-n // design.n_arms)
    blocks = [rng.permutation(design.n_arms) for _ in range(n_blocks)]
    arm = np.concatenate(blocks)[:n]
    rand_week = np.arange(n) // int(design.enrollment_rate) + 1
    return Enrollment(arm=arm.astype(np.int64), rand_week=rand_week.astype(np.int64))


@dataclass(frozen=True)
class TrialDataset:
    """Complete simulated trial.  Visit arrays are ordered by patient, then week."""

    design: DesignSpec
    arm: np.ndarray
    rand_week: np.ndarray
    visit_patient: np.ndarray
    visit_week: np.ndarray
    log10_ttp: np.ndarray
    censored: np.ndarray
    event_time: np.ndarray
    event_observed: np.ndarray

    @property
    def n_patients(self):
        return len(self.arm)


def simulate_ttp(params, design, arm, rng):
    """Weekly log10(TTP) for weeks 0..ttp_weeks; values above the limit are censored.

    Returns ``(visit_patient, visit_week, log10_ttp, censored)``.
    """
    arm = np.asarray(arm)
    if len(params.beta_arm) != design.n_arms - 1:
        raise ConfigError("beta_arm", f"expected {design.n_arms - 1} values")
    n = len(arm)
    z = rng.standard_normal((n, 2))
    b0 = params.beta0 + params.sigma_g1 * z[:, 0]
    b1 = params.beta1 + params.sigma_g2 * (
        params.rho * z[:, 0] + math.sqrt(1.0 - params.rho**2) * z[:, 1]
    )
    effect = np.concatenate([[0.0], params.beta_arm])[arm]
    weeks = np.arange(design.ttp_weeks + 1)
    T = np.broadcast_to(weeks, (n, len(weeks)))
    e = params.sigma_e * rng.standard_normal(T.shape)
    y = b0[:, None] + b1[:, None] * T + effect[:, None] * T + e
    limit = design.censor_limit
    censored = y > limit
    y = np.where(censored, limit, y)
    visit_patient = np.repeat(np.arange(n), len(weeks))
    return visit_patient, T.ravel().copy(), y.ravel(), censored.ravel()


def simulate_events(spec, arm, rng):
    """Weibull event times from end of treatment, censored at each arm's horizon.

    Returns ``(event_time, event_observed)``; censored patients carry their
    horizon as the event time.
    """
    arm = np.asarray(arm)
    u = 1.0 - rng.random(len(arm))  # (0, 1]
    gamma = np.asarray(spec.gamma)[arm]
    if spec.frailty_sd > 0:
        gamma = gamma + spec.frailty_sd * rng.standard_normal(len(arm))
    t = weibull_inverse_cdf(u, spec.p, gamma)
    horizon = np.asarray(spec.horizon)[arm]
    observed = t <= horizon
    return np.where(observed, t, horizon), observed


def simulate_trial(params, weibull, design, seed):
    """Full dataset; each mechanism draws from its own child stream of ``seed``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng_enroll, rng_ttp, rng_event = (np.random.default_rng(s) for s in ss.spawn(3))
    enrollment = assign_enrollment(design, rng_enroll)
    visit_patient, week, y, censored = simulate_ttp(params, design, enrollment.arm, rng_ttp)
    event_time, observed = simulate_events(weibull, enrollment.arm, rng_event)
    return TrialDataset(
        design=design,
        arm=enrollment.arm,
        rand_week=enrollment.rand_week,
        visit_patient=visit_patient,
        visit_week=week,
        log10_ttp=y,
        censored=censored,
        event_time=event_time,
        event_observed=observed,
    )


@dataclass(frozen=True)
class LongitudinalData:
    """Visit-level data for the mixed model fit.

    ``patient_arm[i]`` is the arm of patient ``i``; visits refer to patients by
    index into ``patient_arm``.
    """

    patient_arm: np.ndarray
    visit_patient: np.ndarray
    visit_week: np.ndarray
    log10_ttp: np.ndarray
    censored: np.ndarray
    censor_limit: float
    n_arms: int

    def __post_init__(self):
        for f in fields(self):
            if f.name not in ("censor_limit", "n_arms"):
                object.__setattr__(self, f.name, np.asarray(getattr(self, f.name)))

    @property
    def n_patients(self):
        return len(self.patient_arm)


@dataclass(frozen=True)
class InterimSnapshot:
    interim_week: int
    design: DesignSpec
    patient_id: np.ndarray
    arm: np.ndarray
    rand_week: np.ndarray
    visit_patient: np.ndarray  # index into the snapshot's patient arrays
    visit_week: np.ndarray
    log10_ttp: np.ndarray
    censored: np.ndarray
    event_counts: np.ndarray
    enrolled: np.ndarray = field(default=None)

    @property
    def longitudinal(self):
        return LongitudinalData(
            patient_arm=self.arm,
            visit_patient=self.visit_patient,
            visit_week=self.visit_week,
            log10_ttp=self.log10_ttp,
            censored=self.censored,
            censor_limit=self.design.censor_limit,
            n_arms=self.design.n_arms,
        )


def interim_week(design):
    """Calendar week of the first interim: one week after the last interim patient's final visit."""
    last_rand_week = (design.n_interim - 1) // int(design.enrollment_rate) + 1
    return last_rand_week + design.ttp_weeks + 1


def event_calendar_week(dataset):
    """Calendar week in which each patient's event falls (events counted at week granularity)."""
    duration = np.asarray(dataset.design.duration)[dataset.arm]
    return dataset.rand_week + duration + np.floor(dataset.event_time)


def take_interim_snapshot(dataset, week=None):
    """Data visible at ``week`` (default: the first interim analysis)."""
    design = dataset.design
    counts_per_arm = np.bincount(dataset.arm[: design.n_interim], minlength=design.n_arms)
    if dataset.n_patients < design.n_interim or np.any(counts_per_arm < design.n_per_arm):
        raise ValueError("dataset does not reach the interim sample size in every arm")
    if week is None:
        week = interim_week(design)

    keep_patient = dataset.rand_week <= week
    patient_id = np.flatnonzero(keep_patient)
    new_index = np.full(dataset.n_patients, -1)
    new_index[patient_id] = np.arange(len(patient_id))

    visible = dataset.rand_week[dataset.visit_patient] + dataset.visit_week <= week
    visible &= keep_patient[dataset.visit_patient]

    happened = dataset.event_observed & (event_calendar_week(dataset) <= week)
    event_counts = np.bincount(dataset.arm[happened], minlength=design.n_arms)
    enrolled = np.bincount(dataset.arm[keep_patient], minlength=design.n_arms)

    return InterimSnapshot(
        interim_week=int(week),
        design=design,
        patient_id=patient_id,
        arm=dataset.arm[keep_patient],
        rand_week=dataset.rand_week[keep_patient],
        visit_patient=new_index[dataset.visit_patient[visible]],
        visit_week=dataset.visit_week[visible],
        log10_ttp=dataset.log10_ttp[visible],
        censored=dataset.censored[visible],
        event_counts=event_counts,
        enrolled=enrolled,
    )
