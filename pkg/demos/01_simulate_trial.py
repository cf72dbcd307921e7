"""
Simulating a five-arm trial up to its first interim look
=========================================================

Patients are randomized at ten per week in permuted blocks.  Each one gets
weekly log10 time-to-positivity readings for eight weeks and a Weibull time
to an unfavorable outcome measured from the end of treatment.
"""

import numpy as np

from mamstpp.dgm import (
    DesignSpec,
    LmmParams,
    WeibullSpec,
    calibrate_weibull,
    interim_week,
    simulate_trial,
    take_interim_snapshot,
)

# %%
# The control arm treats for 26 weeks and the four novel arms for 16, so the
# event horizons (52 weeks minus treatment) are 26 and 36 weeks.
design = DesignSpec(n_per_arm=30)
print("horizons:", design.horizon)

# %%
# Each arm's log-hazard intercept is solved so that the requested share of
# patients has an event by its horizon.
for rate in (0.025, 0.05, 0.10):
    print(f"rate {rate:.3f}: gamma = {calibrate_weibull(0.425, rate, 36):.4f}")

# %%
# Slopes are set through percent changes relative to the control slope.
params = LmmParams.from_theta((10, 20, 30, 40))
weibull = WeibullSpec.calibrated((0.05, 0.10, 0.05, 0.05, 0.025), design)
trial = simulate_trial(params, weibull, design, seed=2024)
print("patients:", trial.n_patients, " visits:", len(trial.log10_ttp),
      " censored visits:", int(trial.censored.sum()))

# %%
# The interim happens one week after the last interim patient's final visit.
snap = take_interim_snapshot(trial)
print("interim week:", snap.interim_week, "(formula:", interim_week(design), ")")
print("unfavorable outcomes per arm so far:", snap.event_counts)

# %%
# Mean trajectory per arm, a quick look at what the model will see.
weeks = np.arange(design.ttp_weeks + 1)
arm_of_visit = snap.arm[snap.visit_patient]
for k in range(design.n_arms):
    means = [snap.log10_ttp[(arm_of_visit == k) & (snap.visit_week == w)].mean() for w in weeks]
    print(f"arm {k + 1}:", " ".join(f"{m:.2f}" for m in means))
