import math
import warnings

import numpy as np
import pytest
from scipy import special, stats

from mamstpp import _gibbs
from mamstpp.dgm import DesignSpec, LmmParams, LongitudinalData, WeibullSpec, simulate_trial, take_interim_snapshot
from mamstpp.diagnostics import ess_bulk
from mamstpp.lmm import (
    PosteriorDraws,
    PriorSpec,
    SamplerConfig,
    derive_theta,
    fit,
    param_names,
    summarize,
)
from mamstpp.dgm import ConfigError

import oracles

FAST = SamplerConfig(n_chains=4, n_iterations=1500, n_warmup=500)


def snapshot(n_per_arm=30, seed=1, n_arms=5, **lmm):
    design = DesignSpec(n_arms=n_arms, n_per_arm=n_per_arm,
                        duration=(26,) + (16,) * (n_arms - 1))
    params = LmmParams.from_theta((10, 20, 30, 40)[: n_arms - 1], **lmm)
    weibull = WeibullSpec.calibrated((0.05,) * n_arms, design)
    return take_interim_snapshot(simulate_trial(params, weibull, design, seed))


def mcse_mean(x, chains):
    """MCSE of a posterior mean from a (chains * draws) vector."""
    arr = np.asarray(x).reshape(chains, -1)
    return float(np.std(x, ddof=1) / math.sqrt(ess_bulk(arr)))


def manual_draws(beta1, beta_arm):
    beta1 = np.asarray(beta1, dtype=float)
    beta_arm = np.asarray(beta_arm, dtype=float).reshape(len(beta1), -1)
    n = len(beta1)
    z = np.zeros(n)
    return PosteriorDraws(chain=z.astype(int), iteration=np.arange(n), beta0=z, beta1=beta1,
                          beta_arm=beta_arm, sigma_g1=z, sigma_g2=z, rho=z, sigma_e=z)


# --- configuration ------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(n_warmup=2500), dict(thinning=0), dict(n_chains=0)])
def test_sampler_config_invalid(kw):
    with pytest.raises(ConfigError):
        SamplerConfig(**kw)


@pytest.mark.parametrize("kw", [dict(beta_sd=0.0), dict(re_df=1.0), dict(sigma_e2_shape=-1.0)])
def test_prior_invalid(kw):
    with pytest.raises(ConfigError):
        PriorSpec(**kw)


# --- kernel primitives --------------------------------------------------------------

@pytest.mark.parametrize("p", [1e-300, 1e-50, 1e-10, 0.02425, 0.1, 0.425, 0.5, 0.7, 0.97575,
                               1 - 1e-10])
def test_ndtri_matches_scipy(p):
    assert _gibbs.ndtri(p) == pytest.approx(special.ndtri(p), rel=1e-13, abs=1e-15)


def test_truncnorm_matches_scipy_distribution():
    rng = np.random.default_rng(0)
    mu, sigma, lower = 1.4, 0.15, math.log10(42)
    u = 1.0 - rng.random(20_000)
    x = np.array([_gibbs.truncnorm_above(mu, sigma, lower, ui) for ui in u])
    assert np.all(x > lower)
    ref = stats.truncnorm(a=(lower - mu) / sigma, b=np.inf, loc=mu, scale=sigma)
    assert stats.kstest(x, ref.cdf).pvalue > 0.01


@pytest.mark.parametrize("a", [5.0, 20.0, 40.0, 200.0])
def test_truncnorm_far_tail_stays_above_limit(a):
    lower = 1.0
    sigma = 0.1
    mu = lower - a * sigma
    for u in (1e-12, 0.3, 0.999999, 1.0):
        x = _gibbs.truncnorm_above(mu, sigma, lower, u)
        assert x > lower and math.isfinite(x)
        # the excess over the limit is about sigma^2 / (lower - mu) in the far tail
        assert x - lower < 50 * sigma / a


# --- theta and summaries ------------------------------------------------------------

def test_derive_theta_examples():
    d = derive_theta(manual_draws([0.05, 0.06], [[0.02], [0.0]]))
    np.testing.assert_allclose(d.theta[:, 0], [40.0, 0.0])
    d = derive_theta(manual_draws([0.05, 0.05, 0.04], [[0.01], [0.02], [0.02]]))
    np.testing.assert_allclose(d.theta[:, 0], [20.0, 40.0, 50.0])
    assert summarize(d)[0][0] == pytest.approx(40.0)


def test_derive_theta_exact_rowwise():
    rng = np.random.default_rng(2)
    b1 = rng.uniform(0.01, 0.1, 500)
    ba = rng.normal(0, 0.02, (500, 3))
    d = derive_theta(manual_draws(b1, ba))
    assert np.array_equal(d.theta, 100.0 * ba / b1[:, None])


def test_derive_theta_flags_nonpositive_control_slope():
    b1 = np.array([0.05] * 95 + [-0.01] * 5)
    with pytest.warns(RuntimeWarning):
        d = derive_theta(manual_draws(b1, np.full(100, 0.01)))
    assert any(f.startswith("nonpositive_control_slope") for f in d.flags)
    assert d.valid_theta.shape[0] == 95
    # under the limit no warning and no flag
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        d = derive_theta(manual_draws(np.full(100, 0.05), np.full(100, 0.01)))
    assert d.flags == ()


def test_summarize_examples():
    assert summarize(np.full(100, 40.0))[0] == (40.0, 40.0, 40.0)
    med, lo, hi = summarize(np.array([10.0, 20, 30, 40, 50]), alpha=0.2)[0]
    assert (med, lo, hi) == pytest.approx((30.0, 14.0, 46.0))
    x = np.random.default_rng(0).standard_normal(40_001)
    assert abs(summarize(np.concatenate([x, -x]))[0][0]) < 1e-12
    with pytest.raises(ValueError):
        summarize(np.empty((0, 2)))


# --- the sampler --------------------------------------------------------------------

def test_draw_count_names_and_reproducibility():
    snap = snapshot(n_per_arm=20)
    cfg = SamplerConfig(n_chains=2, n_iterations=600, n_warmup=200, thinning=2)
    d1, diag1 = fit(snap, config=cfg, seed=5)
    d2, _ = fit(snap, config=cfg, seed=5)
    d3, _ = fit(snap, config=cfg, seed=6)
    assert d1.n_draws == 2 * (600 - 200) // 2
    assert list(d1.columns())[:4] == ["chain", "iter", "beta0", "beta1"]
    for name, col in d1.columns().items():
        assert np.array_equal(col, d2.columns()[name]), name
    assert not np.array_equal(d1.beta1, d3.beta1)
    assert set(param_names(5)) <= set(diag1.names)
    assert np.array_equal(d1.theta, 100.0 * d1.beta_arm / d1.beta1[:, None])


def test_default_fit_converges_and_recovers_truth():
    snap = snapshot(n_per_arm=40, seed=3)
    draws, diag = fit(snap, seed=1)
    assert diag.converged, diag.as_dict()
    assert draws.n_draws == 4 * 1500
    means = {
        "beta0": draws.beta0.mean(), "beta1": draws.beta1.mean(),
        "sigma_e": draws.sigma_e.mean(), "sigma_g1": draws.sigma_g1.mean(),
    }
    assert means["beta0"] == pytest.approx(0.9, abs=0.1)
    assert means["beta1"] == pytest.approx(0.06, abs=0.02)
    assert means["sigma_e"] == pytest.approx(0.15, abs=0.02)
    assert means["sigma_g1"] == pytest.approx(0.2, abs=0.06)


def test_prior_recovery_without_data():
    empty = LongitudinalData(
        patient_arm=np.zeros(0, dtype=int), visit_patient=np.zeros(0, dtype=int),
        visit_week=np.zeros(0), log10_ttp=np.zeros(0), censored=np.zeros(0, dtype=bool),
        censor_limit=math.log10(42), n_arms=3,
    )
    priors = PriorSpec()
    draws, _ = fit(empty, priors, FAST, seed=3)
    for x in (draws.beta0, draws.beta1, draws.beta_arm[:, 0], draws.beta_arm[:, 1]):
        se = mcse_mean(x, FAST.n_chains)
        assert abs(x.mean() - priors.beta_mean) < 3 * se
        # sd of a normal sample: se(sd) ~ sd / sqrt(2 n_eff)
        n_eff = ess_bulk(np.asarray(x).reshape(FAST.n_chains, -1))
        assert abs(x.std(ddof=1) - priors.beta_sd) < 3 * priors.beta_sd / math.sqrt(2 * n_eff)
    # residual variance keeps its inverse-gamma(2, 0.1) prior
    s2 = draws.sigma_e**2
    assert np.median(s2) == pytest.approx(stats.invgamma(2, scale=0.1).median(), rel=0.05)


def _uncensored_fixed_effects_data(seed=4, n_per_arm=15):
    rng = np.random.default_rng(seed)
    n_arms = 3
    arm = np.repeat(np.arange(n_arms), n_per_arm)
    beta = np.array([0.9, 0.06, 0.012, 0.024])
    vp, week, y = oracles.simulate_from_params(rng, beta, np.zeros((2, 2)), 0.15**2, arm, 8)
    data = LongitudinalData(patient_arm=arm, visit_patient=vp, visit_week=week, log10_ttp=y,
                            censored=np.zeros(len(y), dtype=bool), censor_limit=math.log10(42),
                            n_arms=n_arms)
    return data, vp, week, y


def test_conjugate_oracle():
    data, vp, week, y = _uncensored_fixed_effects_data()
    priors = PriorSpec()
    X = oracles.fixed_effects_design(data.patient_arm, vp, week, data.n_arms)
    mean, cov = oracles.conjugate_posterior(X, y, 0.15, priors.beta_mean, priors.beta_sd)
    draws, _ = fit(data, priors, FAST, seed=8, random_effects=False, fixed_sigma_e=0.15)
    cols = np.column_stack([draws.beta0, draws.beta1, draws.beta_arm])
    for j in range(cols.shape[1]):
        se = mcse_mean(cols[:, j], FAST.n_chains)
        assert abs(cols[:, j].mean() - mean[j]) < 3 * se, j
        assert cols[:, j].std(ddof=1) == pytest.approx(math.sqrt(cov[j, j]), rel=0.05)
    assert np.all(draws.sigma_e == 0.15)
    assert np.all(draws.sigma_g1 == 0) and np.all(draws.sigma_g2 == 0)


def test_censoring_machinery_inert_on_uncensored_data():
    data, *_ = _uncensored_fixed_effects_data(seed=5)
    # limit set above every value: the augmentation step is active but never binds
    data = LongitudinalData(**{**data.__dict__, "censor_limit": math.log10(100)})
    assert data.log10_ttp.max() < data.censor_limit
    off = LongitudinalData(**{**data.__dict__, "censor_limit": math.inf})
    a, _ = fit(data, config=FAST, seed=1)
    b, _ = fit(off, config=FAST, seed=2)
    for x, z in ((a.beta1, b.beta1), (a.beta_arm[:, 1], b.beta_arm[:, 1]), (a.sigma_e, b.sigma_e)):
        se = math.hypot(mcse_mean(x, 4), mcse_mean(z, 4))
        assert abs(x.mean() - z.mean()) < 3 * se


def test_latent_responses_exceed_limit():
    snap = snapshot(n_per_arm=20, seed=2, beta0=1.3)
    assert snap.censored.mean() > 0.2
    cfg = SamplerConfig(n_chains=2, n_iterations=400, n_warmup=100)
    _, _, latent = fit(snap, config=cfg, seed=0, return_latent=True)
    assert latent.shape == (2, 400)
    assert np.all(latent > 0)


def test_augmentation_removes_censoring_bias():
    # same data fitted with latent augmentation and with censored values taken at face value
    snap = snapshot(n_per_arm=40, seed=6, beta0=1.25)
    assert snap.censored.mean() > 0.25
    draws, _ = fit(snap, config=FAST, seed=1)
    naive = snap.longitudinal
    naive = LongitudinalData(**{**naive.__dict__, "censored": np.zeros_like(naive.censored)})
    flat, _ = fit(naive, config=FAST, seed=1)
    # ignoring censoring flattens the slope; augmentation keeps it near the truth
    assert flat.beta1.mean() < draws.beta1.mean()
    assert abs(draws.beta1.mean() - 0.06) < abs(flat.beta1.mean() - 0.06)


def test_posterior_contraction():
    sds = []
    for n in (20, 30, 40, 50):
        design = DesignSpec(n_arms=2, n_per_arm=n, duration=(26, 16))
        params = LmmParams.from_theta((20,))
        weibull = WeibullSpec.calibrated((0.05, 0.05), design)
        snap = take_interim_snapshot(simulate_trial(params, weibull, design, 1000 + n))
        d, _ = fit(snap, config=FAST, seed=n)
        sds.append(d.beta1.std(ddof=1))
    # each step may wobble within MC error of the SD estimate, the trend must hold
    for a, b in zip(sds, sds[1:]):
        assert b < a * 1.05
    assert sds[-1] < sds[0] * 0.85


def test_degenerate_arm_is_flagged_not_fatal():
    snap = snapshot(n_per_arm=20, seed=3)
    cens = snap.censored.copy()
    arm_of_visit = snap.arm[snap.visit_patient]
    cens[arm_of_visit == 2] = True
    y = np.where(cens, snap.design.censor_limit, snap.log10_ttp)
    data = LongitudinalData(**{**snap.longitudinal.__dict__, "censored": cens, "log10_ttp": y})
    cfg = SamplerConfig(n_chains=2, n_iterations=400, n_warmup=100)
    draws, diag = fit(data, config=cfg, seed=0)
    assert "all_censored_arm:3" in draws.flags
    assert np.all(np.isfinite(draws.beta_arm))
