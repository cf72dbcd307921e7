import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mamstpp.decision import (
    CONTINUE,
    GO,
    NO_GO,
    REASONS,
    STOP,
    DecisionPolicy,
    RankingMetrics,
    TppSpec,
    compute_probabilities,
    lack_of_benefit,
    ranking_probs,
    sequential_decision,
    tpp_decision,
)
from mamstpp.dgm import ConfigError
from mamstpp.lmm import PosteriorDraws, derive_theta

SPEC = TppSpec(theta_mav=0, theta_tv=20, tau_mav=0.025, tau_tv=0.025)

# reference interim rows (arm: p_mav, p_tv, psi3, events)
TABLE_ROWS = {2: (0.81, 0.26, 0.03, 1), 3: (0.97, 0.59, 0.24, 0), 4: (0.99, 0.79, 0.71, 0),
              5: (1.00, 0.99, 1.00, 0)}


def ranking(psi2, psi3):
    psi2 = np.asarray(psi2, float)
    return RankingMetrics(psi1=np.concatenate([[np.nan], np.ones(len(psi2) - 1)]), psi2=psi2,
                          psi3=np.asarray(psi3, float), n_draws=100)


# --- lack of benefit --------------------------------------------------------------

@pytest.mark.parametrize("count, m, flag", [(0, 2, False), (2, 2, True), (1, 2, False),
                                            (5, 2, True), (0, 1, False), (1, 1, True)])
def test_lack_of_benefit(count, m, flag):
    assert lack_of_benefit(count, m) is flag


def test_lack_of_benefit_preconditions():
    with pytest.raises(ValueError):
        lack_of_benefit(-1, 2)
    with pytest.raises(ValueError):
        lack_of_benefit(0, 0)


# --- TPP ----------------------------------------------------------------------------

@pytest.mark.parametrize("p_mav, p_tv, expected", [
    (0.81, 0.26, CONTINUE), (0.99, 0.79, GO), (0.50, 0.02, NO_GO), (1.00, 0.99, GO),
    (0.97, 0.59, CONTINUE), (0.99, 0.025, NO_GO), (0.975, 0.5, CONTINUE), (0.9751, 0.5, GO),
])
def test_tpp_examples(p_mav, p_tv, expected):
    assert tpp_decision(p_mav, p_tv, SPEC) == expected


@pytest.mark.parametrize("kw", [dict(theta_tv=-1), dict(tau_mav=0), dict(tau_tv=1.0)])
def test_tpp_spec_invalid(kw):
    with pytest.raises(ConfigError):
        TppSpec(**kw)


probs = st.floats(0, 1)
taus = st.floats(0.001, 0.5)


@given(p_mav=probs, p_tv=probs, tau_mav=taus, tau_tv=taus)
def test_tpp_partition(p_mav, p_tv, tau_mav, tau_tv):
    spec = TppSpec(tau_mav=tau_mav, tau_tv=tau_tv)
    d = tpp_decision(p_mav, p_tv, spec)
    conditions = {NO_GO: p_tv <= tau_tv, GO: p_tv > tau_tv and p_mav > 1 - tau_mav}
    conditions[CONTINUE] = not conditions[NO_GO] and not conditions[GO]
    assert [k for k, v in conditions.items() if v] == [d]


@given(p_mav=probs, p_tv=probs, d_mav=st.floats(0, 1), d_tv=st.floats(0, 1))
def test_tpp_monotone(p_mav, p_tv, d_mav, d_tv):
    before = tpp_decision(p_mav, p_tv, SPEC)
    if before == GO:
        assert tpp_decision(p_mav, min(1.0, p_tv + d_tv), SPEC) != NO_GO
        assert tpp_decision(min(1.0, p_mav + d_mav), p_tv, SPEC) == GO


def test_compute_probabilities_examples():
    assert compute_probabilities(np.full(50, 40.0), SPEC) == [(1.0, 1.0)]
    assert compute_probabilities(np.array([10.0, 30.0]), SPEC)[0][1] == 0.5
    # TV uses >=, MAV uses >
    assert compute_probabilities(np.array([0.0, 20.0]), SPEC) == [(0.5, 0.5)]
    with pytest.raises(ValueError):
        compute_probabilities(np.empty((0, 2)), SPEC)


# --- ranking -------------------------------------------------------------------------

def test_ranking_hand_enumeration():
    theta = np.column_stack([[0.3, 0.1, 0.5, 0.2], [0.2, 0.2, 0.4, 0.3]])
    r = ranking_probs(theta)
    np.testing.assert_array_equal(r.psi2, [0.0, 0.5, 0.5])
    np.testing.assert_array_equal(r.psi1[1:], [1.0, 1.0])
    assert np.isnan(r.psi1[0])
    np.testing.assert_array_equal(r.psi3, [0.0, 1.0, 1.0])


def test_ranking_single_arm_positive():
    r = ranking_probs(np.full(100, 15.0))
    assert r.psi1[1] == 1.0 and r.psi2[1] == 1.0 and r.psi2[0] == 0.0


def test_ranking_ties_go_to_lowest_index():
    r = ranking_probs(np.zeros((10, 4)))
    np.testing.assert_array_equal(r.psi2, [1, 0, 0, 0, 0])
    np.testing.assert_array_equal(r.psi3, [1, 1, 0, 0, 0])
    r = ranking_probs(np.full((10, 3), 7.0))
    np.testing.assert_array_equal(r.psi2, [0, 1, 0, 0])


theta_matrices = st.integers(1, 6).flatmap(lambda k: arrays(
    np.float64, st.tuples(st.integers(1, 60), st.just(k)),
    elements=st.one_of(st.floats(-200, 200), st.sampled_from([0.0, 20.0, -10.0])),
))


@settings(max_examples=300)
@given(theta=theta_matrices)
def test_psi_identities(theta):
    r = ranking_probs(theta)
    assert abs(r.psi2.sum() - 1.0) <= 1e-12
    assert abs(r.psi3.sum() - min(2, theta.shape[1] + 1)) <= 1e-12
    assert np.all(r.psi3 >= r.psi2)
    assert np.all((r.psi2 >= 0) & (r.psi2 <= 1) & (r.psi3 <= 1))
    p_mav = np.array([pm for pm, _ in compute_probabilities(theta, TppSpec(theta_mav=0))])
    assert np.array_equal(p_mav, r.psi1[1:])


@settings(max_examples=100)
@given(theta=theta_matrices, seed=st.integers(0, 1000), power=st.integers(-8, 8))
def test_ranking_scale_invariant(theta, seed, power):
    n, k = theta.shape
    b1 = np.random.default_rng(seed).uniform(0.01, 0.2, n)
    beta_arm = theta / 100.0 * b1[:, None]
    z = np.zeros(n)

    def draws(scale):
        return derive_theta(PosteriorDraws(
            chain=z.astype(int), iteration=np.arange(n), beta0=z, beta1=b1 * scale,
            beta_arm=beta_arm * scale, sigma_g1=z, sigma_g2=z, rho=z, sigma_e=z,
        ))

    c = 2.0**power
    a, b = ranking_probs(draws(1.0)), ranking_probs(draws(c))
    for name in ("psi1", "psi2", "psi3"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_ranking_empty_rejected():
    with pytest.raises(ValueError):
        ranking_probs(np.empty((0, 3)))


# --- flowchart ------------------------------------------------------------------------

def test_reference_interim_replay():
    counts = [0] + [TABLE_ROWS[k][3] for k in (2, 3, 4, 5)]
    tpp = [tpp_decision(TABLE_ROWS[k][0], TABLE_ROWS[k][1], SPEC) for k in (2, 3, 4, 5)]
    assert tpp == [CONTINUE, CONTINUE, GO, GO]
    r = ranking([0.0, 0.0, 0.0, 0.05, 0.95], [0.02, 0.03, 0.24, 0.71, 1.00])
    out = sequential_decision(counts, tpp, r, DecisionPolicy())
    assert [a.final for a in out.arms[1:]] == [CONTINUE, CONTINUE, GO, GO]
    assert out.arms[0].final is None and out.arms[0].tpp is None


def test_lack_of_benefit_dominates():
    r = ranking([0, 0.5, 0.5], [0, 1, 1])
    out = sequential_decision([0, 2, 0], [GO, GO], r, DecisionPolicy(unfavorable_threshold=2))
    assert out.arms[1].final == STOP and out.arms[1].reason == "lack_of_benefit"
    # only one arm reached the ranking gate, so its GO stands
    assert out.arms[2].final == GO and out.arms[2].reason == "rank_skipped"


def test_continue_regardless_of_ranking():
    r = ranking([0, 1.0, 0.0], [0, 1.0, 1.0])
    out = sequential_decision([0, 0, 0], [CONTINUE, GO], r, DecisionPolicy())
    assert out.arms[1].final == CONTINUE and out.arms[1].reason == "tpp_continue"


def test_ranking_gate_fail_continues():
    r = ranking([0, 0.9, 0.1, 0.0], [0.1, 1.0, 0.6, 0.3])
    out = sequential_decision([0, 0, 0, 0], [GO, GO, GO], r, DecisionPolicy())
    assert [a.reason for a in out.arms[1:]] == ["rank_pass", "rank_pass", "rank_fail"]
    assert out.arms[3].final == CONTINUE


def test_both_stop_causes_recorded():
    r = ranking([1, 0], [1, 1])
    out = sequential_decision([0, 3], [NO_GO], r, DecisionPolicy())
    assert out.arms[1].reason == "lack_of_benefit+tpp_no_go" and out.arms[1].final == STOP


def test_inconsistent_arm_sets_rejected():
    with pytest.raises(ValueError):
        sequential_decision([0, 0, 0], [GO], ranking([1, 0], [1, 1]), DecisionPolicy())


@pytest.mark.parametrize("kw", [dict(unfavorable_threshold=0), dict(ranking_cutoff=1.0),
                                dict(ranking_metric="psi4")])
def test_policy_invalid(kw):
    with pytest.raises(ConfigError):
        DecisionPolicy(**kw)


@settings(max_examples=300)
@given(
    k=st.integers(1, 5), data=st.data(),
    metric=st.sampled_from(["psi1", "psi2", "psi3"]), m=st.integers(1, 4),
)
def test_flowchart_replay(k, data, metric, m):
    counts = data.draw(st.lists(st.integers(0, 5), min_size=k + 1, max_size=k + 1))
    tpp = data.draw(st.lists(st.sampled_from([GO, NO_GO, CONTINUE]), min_size=k, max_size=k))
    vals = data.draw(st.lists(st.floats(0, 1), min_size=k + 1, max_size=k + 1))
    r = RankingMetrics(psi1=np.array([np.nan] + vals[1:]), psi2=np.array(vals),
                       psi3=np.array(vals), n_draws=1)
    policy = DecisionPolicy(unfavorable_threshold=m, ranking_metric=metric)
    out = sequential_decision(counts, tpp, r, policy)
    n_at_gate = sum(1 for j in range(k) if counts[j + 1] < m and tpp[j] == GO)
    for j, a in enumerate(out.arms[1:]):
        assert REASONS[a.reason] == a.final
        if counts[j + 1] >= m or tpp[j] == NO_GO:
            assert a.final == STOP
        elif tpp[j] == CONTINUE:
            assert a.final == CONTINUE
        elif n_at_gate < 2:
            assert a.final == GO
        else:
            assert a.final == (GO if vals[j + 1] > 0.5 else CONTINUE)
