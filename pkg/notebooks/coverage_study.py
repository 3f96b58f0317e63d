"""
Coverage after selection: a small simulation
============================================

Three ways of getting intervals for lasso-selected coefficients are
compared on equicorrelated Gaussian designs: thinning, sample splitting, and
classical double dipping.  Each interval is scored against the coefficient of
the selected sub-model in the population, which is what a post-selection
interval should cover.

Only 200 replications are run here so the script finishes in about ten
seconds; ``scorethin simulate`` runs the full study.
"""

import scorethin.simlab as sl

for kind in ("linear_gaussian", "logistic"):
    scenario = sl.SimScenario(kind=kind, n=400, replications=200, master_seed=1)
    metrics = sl.run_scenario(scenario)
    print(f"\n{kind}: n={scenario.n}, p={scenario.p}, "
          f"amplitude={scenario.signal_amplitude}, alpha={scenario.alpha}")
    print(f"  {'method':<10} {'coverage':>9} {'se':>7} {'width':>7} {'fdr':>6}")
    for row in sl.aggregate(metrics):
        print(f"  {row['method']:<10} {row['coverage']:9.3f} {row['coverage_se']:7.3f} "
              f"{row['mean_width']:7.3f} {row['mean_fdr']:6.2f}")

###############################################################################
# Thinning and splitting both sit near the nominal 90%.  Thinning gives
# slightly narrower intervals because all rows enter the refit.  Double
# dipping gives the narrowest intervals but they undercover.
