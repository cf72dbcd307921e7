"""Bayesian random intercept/slope model for log10(TTP) with right censoring.

Priors are conjugate so that a Gibbs sampler covers every block:

* fixed effects ``(beta0, beta1, beta_arm...)``: independent normals
* residual variance ``sigma_e^2``: inverse-gamma(shape, scale)
* random-effects covariance: inverse-Wishart(df, scale matrix)

Censored visits enter through latent responses drawn above the limit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _gibbs
from .diagnostics import diagnose
from .dgm import ConfigError


@dataclass(frozen=True)
class PriorSpec:
    beta_mean: float | tuple = 0.0
    beta_sd: float | tuple = 10.0
    sigma_e2_shape: float = 2.0
    sigma_e2_scale: float = 0.1
    re_df: float = 4.0
    re_scale: float | tuple = 0.01  # scalar means scale * identity

    def __post_init__(self):
        if np.any(np.asarray(self.beta_sd) <= 0):
            raise ConfigError("beta_sd", "must be > 0")
        if not (self.sigma_e2_shape > 0 and self.sigma_e2_scale > 0):
            raise ConfigError("sigma_e2_shape", "inverse-gamma parameters must be > 0")
        if not self.re_df > 1:
            raise ConfigError("re_df", "must exceed dimension - 1 = 1")
        S = self.re_scale_matrix
        if not np.all(np.linalg.eigvalsh(S) > 0):
            raise ConfigError("re_scale", "must be positive definite")

    @property
    def re_scale_matrix(self):
        s = np.asarray(self.re_scale, dtype=float)
        return s * np.eye(2) if s.ndim == 0 else s.reshape(2, 2)

    def beta_vectors(self, p):
        mean = np.broadcast_to(np.asarray(self.beta_mean, dtype=float), (p,)).copy()
        sd = np.broadcast_to(np.asarray(self.beta_sd, dtype=float), (p,)).copy()
        return mean, sd


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 4
    n_iterations: int = 2500
    n_warmup: int = 1000
    thinning: int = 1
    seed: int = 0
    rhat_threshold: float = 1.01
    min_ess: float = 400.0
    # fraction of draws with a non-positive control slope tolerated before flagging
    degenerate_limit: float = 0.01

    def __post_init__(self):
        if not 0 <= self.n_warmup < self.n_iterations:
            raise ConfigError("n_warmup", "must be in [0, n_iterations)")
        if self.n_chains < 1:
            raise ConfigError("n_chains", "must be >= 1")
        if self.thinning < 1:
            raise ConfigError("thinning", "must be >= 1")

    @property
    def n_kept_per_chain(self):
        return len(range(self.n_warmup, self.n_iterations, self.thinning))


@dataclass(frozen=True)
class PosteriorDraws:
    """Post-warmup draws pooled over chains, in chain-major order."""

    chain: np.ndarray
    iteration: np.ndarray
    beta0: np.ndarray
    beta1: np.ndarray
    beta_arm: np.ndarray  # (draws, n_arms - 1)
    sigma_g1: np.ndarray
    sigma_g2: np.ndarray
    rho: np.ndarray
    sigma_e: np.ndarray
    theta: np.ndarray | None = None
    valid: np.ndarray | None = None
    flags: tuple = field(default=())

    @property
    def n_draws(self):
        return len(self.beta1)

    @property
    def n_arms(self):
        return self.beta_arm.shape[1] + 1

    @property
    def valid_theta(self):
        """theta restricted to draws with a positive control slope."""
        if self.theta is None:
            raise ValueError("theta not derived; call derive_theta first")
        return self.theta[self.valid]

    def columns(self):
        """Column name -> 1-D array, in export order."""
        cols = {
            "chain": self.chain,
            "iter": self.iteration,
            "beta0": self.beta0,
            "beta1": self.beta1,
        }
        for k in range(self.n_arms - 1):
            cols[f"beta_arm_{k + 2}"] = self.beta_arm[:, k]
        cols.update(
            sigma_g1=self.sigma_g1, sigma_g2=self.sigma_g2, rho=self.rho, sigma_e=self.sigma_e
        )
        if self.theta is not None:
            for k in range(self.n_arms - 1):
                cols[f"theta_{k + 2}"] = self.theta[:, k]
        return cols


def param_names(n_arms):
    return (
        ("beta0", "beta1")
        + tuple(f"beta_arm_{k + 2}" for k in range(n_arms - 1))
        + ("sigma_g1", "sigma_g2", "rho", "sigma_e")
    )


def derive_theta(draws, degenerate_limit=0.01):
    """Fill ``theta = 100 * beta_arm / beta1`` (percent change in slope vs control)."""
    theta = 100.0 * draws.beta_arm / draws.beta1[:, None]
    valid = draws.beta1 > 0
    flags = tuple(f for f in draws.flags if not f.startswith("nonpositive_control_slope"))
    frac_bad = 1.0 - valid.mean() if len(valid) else 0.0
    if frac_bad > degenerate_limit:
        flags += (f"nonpositive_control_slope:{frac_bad:.4f}",)
        warnings.warn(
            f"{frac_bad:.1%} of draws have beta1 <= 0; those draws are excluded from summaries",
            RuntimeWarning,
            stacklevel=2,
        )
    return PosteriorDraws(
        **{k: getattr(draws, k) for k in (
            "chain", "iteration", "beta0", "beta1", "beta_arm",
            "sigma_g1", "sigma_g2", "rho", "sigma_e",
        )},
        theta=theta,
        valid=valid,
        flags=flags,
    )


def summarize(draws, alpha=0.05):
    """Per novel arm: (posterior median, lower, upper) of theta.

    Quantiles use linear interpolation between order statistics (Hyndman and
    Fan type 7, numpy's default): the q-quantile of sorted ``x[0..n-1]`` sits
    at position ``(n - 1) * q``.
    """
    theta = draws.valid_theta if isinstance(draws, PosteriorDraws) else np.asarray(draws)
    if theta.ndim == 1:
        theta = theta[:, None]
    if theta.shape[0] == 0:
        raise ValueError("no draws to summarize")
    q = np.quantile(theta, [0.5, alpha / 2, 1 - alpha / 2], axis=0, method="linear")
    return [tuple(float(v) for v in q[:, k]) for k in range(theta.shape[1])]


def _data_checks(data):
    flags = []
    for k in range(data.n_arms):
        pats = np.flatnonzero(data.patient_arm == k)
        visits = np.bincount(data.visit_patient, minlength=data.n_patients)[pats]
        if np.sum(visits >= 2) < 2:
            flags.append(f"sparse_arm:{k + 1}")
        in_arm = data.patient_arm[data.visit_patient] == k
        if in_arm.any() and data.censored[in_arm].all():
            flags.append(f"all_censored_arm:{k + 1}")
    return flags


def _initial_values(data, rng, p, prior_mean, prior_sd, random_effects, fixed_sigma_e2):
    if len(data.log10_ttp):
        T = data.visit_week.astype(float)
        X = np.zeros((len(T), p))
        X[:, 0] = 1.0
        X[:, 1] = T
        arm = data.patient_arm[data.visit_patient]
        for k in range(1, data.n_arms):
            X[arm == k, 1 + k] = T[arm == k]
        beta, *_ = np.linalg.lstsq(X, data.log10_ttp, rcond=None)
        resid = data.log10_ttp - X @ beta
        s2 = max(float(resid.var()), 1e-4)
        beta = beta + 0.1 * np.sqrt(s2) * rng.standard_normal(p)
        s2 *= np.exp(0.2 * rng.standard_normal())
    else:
        beta = prior_mean + prior_sd * rng.standard_normal(p)
        s2 = 0.1 * np.exp(0.2 * rng.standard_normal())
    Sigma = np.diag([0.01, 1e-4]) * np.exp(0.2 * rng.standard_normal()) if random_effects else np.zeros((2, 2))
    if fixed_sigma_e2 > 0:
        s2 = fixed_sigma_e2
    return beta, Sigma, s2


def fit(data, priors=None, config=None, *, seed=None, random_effects=True, fixed_sigma_e=None,
        return_latent=False):
    """Gibbs-sample the censored mixed model.

    Args:
        data: an ``InterimSnapshot`` or ``LongitudinalData``.
        priors: ``PriorSpec``; defaults to the weakly informative defaults.
        config: ``SamplerConfig``.
        seed: overrides ``config.seed``; an int or ``np.random.SeedSequence``.
        random_effects: if False, random effects are fixed at zero.
        fixed_sigma_e: hold the residual SD at this value instead of sampling it.
        return_latent: also return the smallest excess of any imputed latent
            response over the censor limit, per chain and iteration.

    Returns:
        ``(PosteriorDraws, ChainDiagnostics)`` with theta already derived,
        plus the latent-excess array when ``return_latent`` is set.
    """
    priors = priors or PriorSpec()
    config = config or SamplerConfig()
    if hasattr(data, "longitudinal"):
        data = data.longitudinal
    p = data.n_arms + 1
    prior_mean, prior_sd = priors.beta_vectors(p)
    fixed_s2 = float(fixed_sigma_e) ** 2 if fixed_sigma_e is not None else -1.0

    order = np.lexsort((data.visit_week, data.visit_patient))
    vp = data.visit_patient[order].astype(np.int64)
    week = data.visit_week[order].astype(float)
    y = data.log10_ttp[order].astype(float)
    cens = data.censored[order].astype(bool)
    counts = np.bincount(vp, minlength=data.n_patients)
    obs_stop = np.cumsum(counts).astype(np.int64)
    obs_start = (obs_stop - counts).astype(np.int64)
    cens_index = np.flatnonzero(cens).astype(np.int64)
    cens_patient = vp[cens_index]
    patient_arm = np.asarray(data.patient_arm, dtype=np.int64)
    n_pat = data.n_patients

    iw_df_post = priors.re_df + n_pat
    ig_shape_post = priors.sigma_e2_shape + 0.5 * len(y)

    ss = seed if seed is not None else config.seed
    ss = ss if isinstance(ss, np.random.SeedSequence) else np.random.SeedSequence(ss)
    n_iter = config.n_iterations
    keep = slice(config.n_warmup, n_iter, config.thinning)
    chains = []
    latent = []
    for child in ss.spawn(config.n_chains):
        rng = np.random.default_rng(child)
        beta0, Sigma0, s20 = _initial_values(
            data, rng, p, prior_mean, prior_sd, random_effects, fixed_s2
        )
        z_beta = rng.standard_normal((n_iter, p))
        z_u = rng.standard_normal((n_iter, n_pat, 2)) if random_effects else np.zeros((n_iter, 0, 2))
        z_iw = rng.standard_normal(n_iter)
        chi2_iw = np.column_stack([
            2.0 * rng.standard_gamma(iw_df_post / 2.0, n_iter),
            2.0 * rng.standard_gamma((iw_df_post - 1.0) / 2.0, n_iter),
        ])
        gamma_ig = rng.standard_gamma(ig_shape_post, n_iter)
        u_cens = 1.0 - rng.random((n_iter, len(cens_index)))
        out, min_excess = _gibbs.run_chain(
            obs_start, obs_stop, patient_arm, week, y, cens_index, cens_patient,
            float(data.censor_limit), int(data.n_arms), prior_mean, 1.0 / prior_sd**2,
            float(priors.sigma_e2_shape), float(priors.sigma_e2_scale),
            float(priors.re_df), priors.re_scale_matrix, bool(random_effects), fixed_s2,
            beta0, Sigma0, float(s20), z_beta, z_u, z_iw, chi2_iw, gamma_ig, u_cens,
        )
        chains.append(out[keep])
        latent.append(min_excess)
    chains = np.stack(chains)
    n_chains, n_kept, _ = chains.shape
    flat = chains.reshape(n_chains * n_kept, -1)

    draws = PosteriorDraws(
        chain=np.repeat(np.arange(n_chains), n_kept),
        iteration=np.tile(np.arange(n_iter)[keep], n_chains),
        beta0=flat[:, 0],
        beta1=flat[:, 1],
        beta_arm=flat[:, 2:p],
        sigma_g1=flat[:, p],
        sigma_g2=flat[:, p + 1],
        rho=flat[:, p + 2],
        sigma_e=flat[:, p + 3],
        flags=tuple(_data_checks(data)),
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        draws = derive_theta(draws, config.degenerate_limit)

    names = list(param_names(data.n_arms))
    diag_chains = chains
    if not random_effects:
        # random-effect parameters are constant by construction
        drop = [p, p + 1, p + 2]
        diag_chains = np.delete(chains, drop, axis=2)
        names = [n for j, n in enumerate(names) if j not in drop]
    if fixed_s2 > 0:
        diag_chains = diag_chains[:, :, :-1]
        names = names[:-1]
    theta_chains = draws.theta.reshape(n_chains, n_kept, -1)
    diag_chains = np.concatenate([diag_chains, theta_chains], axis=2)
    names += [f"theta_{k + 2}" for k in range(data.n_arms - 1)]
    diagnostics = diagnose(
        diag_chains, names, rhat_threshold=config.rhat_threshold, min_ess=config.min_ess
    )
    if return_latent:
        return draws, diagnostics, np.stack(latent)
    return draws, diagnostics
