"""
Operating characteristics over a small scenario grid
====================================================

Each scenario is replicated end to end (simulate, snapshot, fit, decide) and
the decisions are tallied per arm.  The default study uses 1,000 replicates
per scenario; this script uses a handful so it finishes quickly.  Pass a
replicate count as the first argument for more.
"""

import sys

from mamstpp.harness import aggregate, expand_grid, run_scenario
from mamstpp.lmm import SamplerConfig

replicates = int(sys.argv[1]) if len(sys.argv) > 1 else 10
grid = expand_grid(["One Winner", "No Winners"], ["Mixed"], [20, 40],
                   replicates=replicates, sampler=SamplerConfig(n_iterations=1500, n_warmup=500))

# %%
for cfg in grid:
    oc = aggregate(run_scenario(cfg), cfg)
    print(f"\n{cfg.scenario_id}  (convergence {oc.summary['convergence_rate']:.2f})")
    print(" arm  theta  rate    GO    CONT  STOP  NO-GO(TPP)  flag(M=2)")
    for row in oc.rows:
        print(f" {row['arm']:>3}  {row['theta_true']:>5.0f}  {row['rate_true']:.3f}"
              f"  {row['final_go']:.2f}  {row['final_continue']:.2f}  {row['final_stop']:.2f}"
              f"  {row['tpp_no_go']:>10.2f}  {row['lack_of_benefit']:>9.2f}")
    if len(set(cfg.theta)) > 1:
        s = oc.summary
        print(f" median psi2: true best arm {s['psi2_best_median']:.2f}, "
              f"runner-up {s['psi2_second_median']:.2f}")
