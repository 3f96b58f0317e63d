"""
Thinning the score: selection and inference from one dataset
============================================================

A lasso picks variables, then we want confidence intervals for the picked
coefficients.  Reusing the same outcomes for both steps ("double dipping")
makes intervals too optimistic.  Here we add Gaussian noise to the outcomes
to make a selection copy, subtract a rescaled version to make an inference
copy, and build sandwich intervals from the second copy only.
"""

import numpy as np

import scorethin as st
from scorethin.simlab import submodel_target

rng = np.random.default_rng(0)

# A sparse linear model with correlated features.
n, p = 400, 20
Z = rng.standard_normal((n, 1))
X = np.sqrt(0.3) * Z + np.sqrt(0.7) * rng.standard_normal((n, p))
theta_star = np.zeros(p)
theta_star[[0, 3, 7]] = [0.4, -0.3, 0.25]
mu = X @ theta_star
y = mu + rng.standard_normal(n)
data = st.Dataset(X, y)

###############################################################################
# Split the outcomes into two copies.  With ``gamma = 1`` the selection copy
# carries as much extra noise as the original, much like a 50/50 sample split,
# yet every row is used in both steps.

theta_pilot = st.pilot_fit(st.GAUSSIAN, data)
pair = st.thin_outcomes(data, st.GAUSSIAN, theta_pilot, gamma=1.0, rng=1)
print("recombination error:", np.abs(pair.recombine() - y).max())

###############################################################################
# ``select_and_infer`` chains the pilot fit, the noise draw, the lasso on the
# selection copy, the refit on the inference copy and the interval step.

fit = st.select_and_infer(st.GAUSSIAN, data, "auto", alpha=0.1, rng=1)
target = submodel_target("linear_gaussian", X, mu, fit.E)
print(f"lambda = {fit.lam:.3f}, selected = {fit.E.tolist()}")
for j, iv, t in zip(fit.E, fit.intervals, target):
    flag = "covers" if iv.lower <= t <= iv.upper else "misses"
    print(f"  theta[{j:2d}]  {iv.estimate:+.3f}  [{iv.lower:+.3f}, {iv.upper:+.3f}]"
          f"  target {t:+.3f} ({flag})")

###############################################################################
# The same noise can be injected into the objective instead of the outcomes.
# For canonical-link models both routes give the same fit.

grad = st.select_and_infer(st.GAUSSIAN, data, "auto", alpha=0.1, rng=1, mode="gradient")
print("same support:", np.array_equal(fit.E, grad.E),
      " max coefficient gap:", np.abs(fit.theta_E - grad.theta_E).max())

###############################################################################
# Double dipping for contrast: select and infer on the same ``y``.

naive_E = st.support_of(st.solve_penalized(
    st.PenalizedProblem(st.GAUSSIAN, data, lam=st.default_lambda(data))).theta)
_, _, naive = st.fixed_model_fit(st.GAUSSIAN, data, naive_E, alpha=0.1)
naive_target = submodel_target("linear_gaussian", X, mu, naive_E)
hits = np.mean([iv.lower <= t <= iv.upper for iv, t in zip(naive, naive_target)])
print(f"double dipping: {naive_E.size} selected, {hits:.0%} of intervals cover")
