"""Sweep the proposal scale on an i.i.d. normal target and locate the most efficient ell.

Efficiency is the expected squared jump of one coordinate, rescaled by d.
Theory predicts the speed v(ell) = 2 ell^2 Phi(-ell/2), maximised at
ell = 2.38 where the acceptance rate is 0.234.
"""
from rwmscale import FixedK, GroupMember, GroupSpec, ScalingVector
from rwmscale.experiments import ExperimentPlan, log_grid, sweep_ell

plan = ExperimentPlan(
    scaling_vector=ScalingVector((), (GroupSpec(FixedK(1), 0),), GroupMember(0)),
    ell_grid=log_grid(0.5, 5.0, 13), d_list=(100,), iterations=50_000, replicates=2, seed=2,
)
result = sweep_ell(plan)

print(f"{'ell':>6} {'accept':>8} {'theory':>8} {'esjd*d':>8} {'v(ell)':>8}")
for row in result.rows:
    print(f"{row['ell']:6.3f} {row['accept_emp']:8.4f} {row['a_theory']:8.4f} "
          f"{row['esjd_rescaled']:8.4f} {row['v_theory']:8.4f}")

opt = result.optimum(100)
print(f"\nempirical optimum ell={opt['ell_opt']:.3f} with acceptance {opt['accept_opt']:.4f} "
      f"+- {opt['accept_opt_se']:.4f}; predicted ell={opt['ell_hat_theory']:.3f}")
