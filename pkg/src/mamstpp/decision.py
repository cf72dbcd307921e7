"""Interim decision rules: lack of benefit, two-level TPP and posterior ranking.

Arms are indexed from 0 with arm 0 the control.  Per-arm results below are
reported for every arm; the control carries ``None`` for quantities that are
defined only relative to it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dgm import ConfigError
from .lmm import PosteriorDraws, summarize

GO = "GO"
NO_GO = "NO-GO"
CONTINUE = "CONTINUE"
STOP = "STOP"

# reason code -> final decision; the flowchart's only exits
REASONS = {
    "lack_of_benefit": STOP,
    "tpp_no_go": STOP,
    "lack_of_benefit+tpp_no_go": STOP,
    "tpp_continue": CONTINUE,
    "rank_fail": CONTINUE,
    "rank_pass": GO,
    "rank_skipped": GO,
}


@dataclass(frozen=True)
class TppSpec:
    theta_mav: float = 0.0
    theta_tv: float = 20.0
    tau_mav: float = 0.025
    tau_tv: float = 0.025

    def __post_init__(self):
        if self.theta_tv < self.theta_mav:
            raise ConfigError("theta_tv", "must be >= theta_mav")
        for name in ("tau_mav", "tau_tv"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(name, "must lie in (0, 1)")


@dataclass(frozen=True)
class DecisionPolicy:
    unfavorable_threshold: int = 2
    ranking_cutoff: float = 0.5
    ranking_metric: str = "psi3"

    def __post_init__(self):
        if self.unfavorable_threshold < 1:
            raise ConfigError("unfavorable_threshold", "must be >= 1")
        if not 0 < self.ranking_cutoff < 1:
            raise ConfigError("ranking_cutoff", "must lie in (0, 1)")
        if self.ranking_metric not in ("psi1", "psi2", "psi3"):
            raise ConfigError("ranking_metric", "must be psi1, psi2 or psi3")


@dataclass(frozen=True)
class RankingMetrics:
    """Posterior ranking probabilities for every arm, control included (index 0)."""

    psi1: np.ndarray
    psi2: np.ndarray
    psi3: np.ndarray
    n_draws: int


@dataclass(frozen=True)
class ArmDecision:
    arm: int
    events: int
    lack_of_benefit: bool
    tpp: str | None
    psi1: float | None
    psi2: float
    psi3: float
    final: str | None
    reason: str | None


@dataclass(frozen=True)
class DecisionOutcome:
    arms: tuple

    def by_arm(self, arm):
        return self.arms[arm]


def lack_of_benefit(count, threshold):
    if count < 0 or threshold < 1:
        raise ValueError("count must be >= 0 and threshold >= 1")
    return count >= threshold


def tpp_decision(p_mav, p_tv, spec):
    """NO-GO if Pr(theta >= TV) <= tau_TV; GO if additionally Pr(theta > MAV) > 1 - tau_MAV."""
    if p_tv <= spec.tau_tv:
        return NO_GO
    if p_mav > 1.0 - spec.tau_mav:
        return GO
    return CONTINUE


def _theta_matrix(draws):
    if isinstance(draws, PosteriorDraws):
        theta = draws.valid_theta
    else:
        theta = np.asarray(draws, dtype=float)
    if theta.ndim == 1:
        theta = theta[:, None]
    if theta.shape[0] == 0:
        raise ValueError("no draws")
    return theta


def compute_probabilities(draws, spec):
    """Per novel arm ``(Pr(theta > theta_MAV), Pr(theta >= theta_TV))`` as draw fractions."""
    theta = _theta_matrix(draws)
    p_mav = np.mean(theta > spec.theta_mav, axis=0)
    p_tv = np.mean(theta >= spec.theta_tv, axis=0)
    return list(zip(p_mav.tolist(), p_tv.tolist()))


def ranking_probs(draws):
    """Draw-wise ranking of all arms with the control fixed at theta = 0.

    Ties go to the lowest arm index: a stable sort of ``-theta`` keeps equal
    values in index order.
    """
    theta = _theta_matrix(draws)
    n = theta.shape[0]
    full = np.concatenate([np.zeros((n, 1)), theta], axis=1)
    order = np.argsort(-full, axis=1, kind="stable")
    n_arms = full.shape[1]
    first = np.bincount(order[:, 0], minlength=n_arms)
    top2 = first + np.bincount(order[:, 1], minlength=n_arms)
    psi1 = np.concatenate([[np.nan], np.mean(theta > 0, axis=0)])
    return RankingMetrics(psi1=psi1, psi2=first / n, psi3=top2 / n, n_draws=n)


def sequential_decision(counts, tpp, ranking, policy):
    """Apply the flowchart to every novel arm.

    Args:
        counts: unfavorable-outcome counts for all arms, control first.
        tpp: TPP decisions for the novel arms (arms 1..K-1).
        ranking: ``RankingMetrics`` over all arms.
        policy: ``DecisionPolicy``.

    The ranking gate applies only when at least two arms get past the first
    two gates; otherwise a TPP GO stands.
    """
    n_arms = len(counts)
    if len(tpp) != n_arms - 1 or len(ranking.psi2) != n_arms:
        raise ValueError("counts, TPP decisions and ranking cover different arm sets")
    metric = getattr(ranking, policy.ranking_metric)
    lob = [lack_of_benefit(int(c), policy.unfavorable_threshold) for c in counts]
    reached_rank = [k for k in range(1, n_arms) if not lob[k] and tpp[k - 1] == GO]
    gate_active = len(reached_rank) >= 2

    arms = [ArmDecision(
        arm=0, events=int(counts[0]), lack_of_benefit=lob[0], tpp=None, psi1=None,
        psi2=float(ranking.psi2[0]), psi3=float(ranking.psi3[0]), final=None, reason=None,
    )]
    for k in range(1, n_arms):
        t = tpp[k - 1]
        if lob[k] and t == NO_GO:
            reason = "lack_of_benefit+tpp_no_go"
        elif lob[k]:
            reason = "lack_of_benefit"
        elif t == NO_GO:
            reason = "tpp_no_go"
        elif t == CONTINUE:
            reason = "tpp_continue"
        elif not gate_active:
            reason = "rank_skipped"
        elif metric[k] > policy.ranking_cutoff:
            reason = "rank_pass"
        else:
            reason = "rank_fail"
        arms.append(ArmDecision(
            arm=k, events=int(counts[k]), lack_of_benefit=lob[k], tpp=t,
            psi1=float(ranking.psi1[k]), psi2=float(ranking.psi2[k]),
            psi3=float(ranking.psi3[k]), final=REASONS[reason], reason=reason,
        ))
    return DecisionOutcome(arms=tuple(arms))


@dataclass(frozen=True)
class ArmReport:
    """One row of the interim report."""

    arm: int
    duration: float
    n: int
    events: int
    theta_median: float | None
    ci_low: float | None
    ci_high: float | None
    p_mav: float | None
    p_tv: float | None
    tpp_decision: str | None
    psi1: float | None
    psi2: float
    psi3: float
    final_decision: str | None
    reason: str | None


def evaluate_interim(snapshot, draws, spec=None, policy=None, alpha=0.05):
    """Run all three framework components on one interim snapshot.

    Returns ``(DecisionOutcome, list[ArmReport])``.
    """
    spec = spec or TppSpec()
    policy = policy or DecisionPolicy()
    probs = compute_probabilities(draws, spec)
    tpp = [tpp_decision(pm, pt, spec) for pm, pt in probs]
    ranking = ranking_probs(draws)
    outcome = sequential_decision(snapshot.event_counts, tpp, ranking, policy)
    summary = summarize(draws, alpha)
    rows = []
    for a in outcome.arms:
        k = a.arm
        novel = k > 0
        med, lo, hi = summary[k - 1] if novel else (None, None, None)
        rows.append(ArmReport(
            arm=k,
            duration=snapshot.design.duration[k],
            n=int(snapshot.enrolled[k]),
            events=a.events,
            theta_median=med,
            ci_low=lo,
            ci_high=hi,
            p_mav=probs[k - 1][0] if novel else None,
            p_tv=probs[k - 1][1] if novel else None,
            tpp_decision=a.tpp,
            psi1=a.psi1,
            psi2=a.psi2,
            psi3=a.psi3,
            final_decision=a.final,
            reason=a.reason,
        ))
    return outcome, rows
