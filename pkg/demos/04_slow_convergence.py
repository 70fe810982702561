"""How fast does the optimal acceptance rate reach 0.234?

Take variances (d^-lam, 1, ..., 1) and study the first component.  The
limit is 0.234 for any lam < 1, but the closer lam is to 1 the slower the
approach, and it comes from above.
"""
from fractions import Fraction

from rwmscale.experiments import dimension_scan, log_grid, scan_plan

for lam, dims in ((Fraction(0), (100,)), (Fraction(1, 2), (50, 200)), (Fraction(3, 4), (100, 400))):
    plan = scan_plan(lam, d_list=dims, ell_grid=log_grid(1.2, 4.0, 13), iterations=40_000, replicates=3, seed=4)
    for row in dimension_scan(plan):
        print(f"lam={str(lam):>4}  d={row['d']:4d}  optimal acceptance {row['accept_opt']:.4f} "
              f"+- {row['accept_opt_se']:.4f}  (acceptance at predicted ell: {row['accept_at_ell_hat']:.4f})")
