"""
Checking the sampler against a closed form
==========================================

With random effects switched off and the residual SD held fixed, the
posterior of the fixed effects is an ordinary normal linear-model posterior.
The sampler should reproduce it up to Monte Carlo error.
"""

import math

import numpy as np

from mamstpp.dgm import LongitudinalData
from mamstpp.diagnostics import diagnose, ess_bulk
from mamstpp.lmm import PriorSpec, SamplerConfig, fit

rng = np.random.default_rng(1)
arm = np.repeat([0, 1], 20)
week = np.tile(np.arange(9), 40).astype(float)
patient = np.repeat(np.arange(40), 9)
slope = np.where(arm[patient] == 1, 0.08, 0.06)
y = 0.9 + slope * week + 0.15 * rng.standard_normal(len(week))
data = LongitudinalData(arm, patient, week, y, np.zeros(len(y), bool), math.log10(42), 2)

# %%
# Closed-form posterior.
X = np.column_stack([np.ones_like(week), week, np.where(arm[patient] == 1, week, 0.0)])
prior_prec = np.eye(3) / PriorSpec().beta_sd**2
cov = np.linalg.inv(X.T @ X / 0.15**2 + prior_prec)
mean = cov @ (X.T @ y / 0.15**2)

# %%
# Sampler.
cfg = SamplerConfig(n_iterations=1500, n_warmup=500)
draws, _ = fit(data, config=cfg, seed=0, random_effects=False, fixed_sigma_e=0.15)
for j, (name, x) in enumerate([("beta0", draws.beta0), ("beta1", draws.beta1),
                               ("beta_arm", draws.beta_arm[:, 0])]):
    se = x.std() / math.sqrt(ess_bulk(x.reshape(cfg.n_chains, -1)))
    print(f"{name:9s} exact {mean[j]:.5f}  sampled {x.mean():.5f}  (MCSE {se:.1e})")

# %%
# The diagnostics flag chains that disagree.
stuck = np.stack([rng.normal(0, 1, 2000), rng.normal(5, 1, 2000)])[:, :, None]
print("R-hat of two separated chains:", float(diagnose(stuck).rhat[0]))
