"""Convergence diagnostics for multi-chain MCMC output.

Both diagnostics follow the rank-normalized definitions of Vehtari, Gelman,
Simpson, Carpenter and Buerkner (2021):

* Each chain is split in half, so ``m`` chains of ``n`` draws become ``2m``
  chains of ``n // 2`` draws.
* Rank normalization: pool all draws, take average ranks ``r`` and map them to
  ``z = Phi^-1((r - 3/8) / (S + 1/4))`` where ``S`` is the pooled draw count.
* R-hat on chains ``x[j, t]``: with ``W`` the mean within-chain variance and
  ``B / n`` the variance of chain means, ``var+ = (n - 1) / n * W + B / n`` and
  ``R = sqrt(var+ / W)``.  Reported R-hat is the larger of the value on the
  rank-normalized draws (bulk) and on rank-normalized ``|x - median(x)|``
  (folded, sensitive to scale differences).
* ESS: ``m * n / tau`` where ``tau = -1 + 2 * sum(rho_t)`` over autocorrelations
  estimated from the combined chains, truncated by Geyer's initial positive
  sequence and made monotone.  Bulk ESS uses the rank-normalized split draws;
  tail ESS is the smaller ESS of the indicators ``x <= q05`` and ``x <= q95``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata


@dataclass(frozen=True)
class ChainDiagnostics:
    names: tuple
    rhat: np.ndarray
    ess_bulk: np.ndarray
    ess_tail: np.ndarray
    rhat_threshold: float
    min_ess: float
    n_chains: int

    @property
    def converged(self):
        if self.n_chains < 2:
            return False
        ok_rhat = np.all(np.isfinite(self.rhat) & (self.rhat < self.rhat_threshold))
        ok_ess = np.all(self.ess_bulk >= self.min_ess) and np.all(self.ess_tail >= self.min_ess)
        return bool(ok_rhat and ok_ess)

    @property
    def max_rhat(self):
        return float(np.max(self.rhat)) if len(self.rhat) else float("nan")

    @property
    def min_ess_observed(self):
        if not len(self.ess_bulk):
            return float("nan")
        return float(min(np.min(self.ess_bulk), np.min(self.ess_tail)))

    def as_dict(self):
        return {
            name: {"rhat": float(r), "ess_bulk": float(b), "ess_tail": float(t)}
            for name, r, b, t in zip(self.names, self.rhat, self.ess_bulk, self.ess_tail)
        }


def split_chains(x):
    """(m, n) -> (2m, n // 2); a trailing odd draw is dropped."""
    x = np.asarray(x, dtype=float)
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)


def rank_normalize(x):
    x = np.asarray(x, dtype=float)
    size = x.size
    ranks = rankdata(x, method="average").reshape(x.shape)
    return ndtri((ranks - 0.375) / (size + 0.25))


def _rhat(x):
    m, n = x.shape
    if n < 2:
        return np.nan
    chain_var = x.var(axis=1, ddof=1)
    W = chain_var.mean()
    B = n * x.mean(axis=1).var(ddof=1)
    if not W > 0:
        return np.nan
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def _autocov(x):
    """Biased autocovariance of each row via FFT."""
    m, n = x.shape
    centered = x - x.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, n=size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n]
    return acov / n


def _ess(x):
    m, n = x.shape
    if n < 4:
        return np.nan
    acov = _autocov(x)
    chain_mean = x.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    if not var_plus > 0:
        return np.nan
    rho = np.zeros(n)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0:
        rho_even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0:
        rho[max_t + 1] = rho_even
    # initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * rho[: max_t + 1].sum() + rho[max_t + 1]
    tau = max(tau, 1.0 / np.log10(total))
    return float(total / tau)


def rhat(x):
    """Rank-normalized split R-hat of one parameter, ``x`` shaped (chains, draws)."""
    x = np.asarray(x, dtype=float)
    if np.ptp(x) == 0:
        return np.nan
    s = split_chains(x)
    bulk = _rhat(rank_normalize(s))
    folded = _rhat(rank_normalize(np.abs(s - np.median(s))))
    return max(bulk, folded)


def ess_bulk(x):
    x = np.asarray(x, dtype=float)
    if np.ptp(x) == 0:
        return np.nan
    return _ess(rank_normalize(split_chains(x)))


def ess_tail(x):
    x = np.asarray(x, dtype=float)
    if np.ptp(x) == 0:
        return np.nan
    s = split_chains(x)
    lo, hi = np.quantile(s, [0.05, 0.95])
    out = []
    for q in (lo, hi):
        ind = (s <= q).astype(float)
        out.append(_ess(ind) if np.ptp(ind) > 0 else np.nan)
    return float(np.nanmin(out)) if not np.all(np.isnan(out)) else np.nan


def diagnose(chains, names=None, rhat_threshold=1.01, min_ess=400.0):
    """Diagnostics for ``chains`` shaped (n_chains, n_draws, n_params).

    Zero-variance parameters get NaN R-hat and ESS and count as non-converged.
    A single chain is diagnosed on its split halves but never reported as
    converged.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim == 2:
        chains = chains[:, :, None]
    n_chains, _, n_params = chains.shape
    if names is None:
        names = tuple(f"x{j}" for j in range(n_params))
    r = np.array([rhat(chains[:, :, j]) for j in range(n_params)])
    eb = np.array([ess_bulk(chains[:, :, j]) for j in range(n_params)])
    et = np.array([ess_tail(chains[:, :, j]) for j in range(n_params)])
    eb = np.where(np.isnan(eb), 0.0, eb)
    et = np.where(np.isnan(et), 0.0, et)
    return ChainDiagnostics(
        names=tuple(names),
        rhat=r,
        ess_bulk=eb,
        ess_tail=et,
        rhat_threshold=rhat_threshold,
        min_ess=min_ess,
        n_chains=n_chains,
    )
