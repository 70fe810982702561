"""A normal target on which the 0.234 rule need not hold.

X_1 ~ N(0, 1) and X_j ~ N(X_1, 1) for j >= 2.  The covariance has one
eigenvalue of order d, one of order 1/d and d - 2 unit eigenvalues.  The
tiny eigenvalue is a single component whose scale rivals the whole bulk,
so the analyzer reports the condition as violated and gives no AOAR.
Simulation shows the best acceptance rate is indeed below 0.234.
"""
from rwmscale.experiments import ExperimentPlan, log_grid, violation_demo

plan = ExperimentPlan(gaussian={"kind": "hierarchical"}, ell_grid=log_grid(1.0, 4.0, 13), d_list=(300,),
                      iterations=40_000, replicates=3, seed=1)
report = violation_demo(plan)
print(f"analyzer: alpha={report.alpha}, condition {report.verdict} "
      f"(largest finite exponent {report.numerator_exponent} vs group order {report.denominator_exponent})")
opt = report.sweep.optima[300]
print(f"empirical optimum: ell={opt['ell_opt']:.3f}, acceptance {opt['accept_opt']:.4f} +- {opt['accept_opt_se']:.4f}")
print(f"below 0.234 by more than 2 SE: {report.below_reference[300]}")
