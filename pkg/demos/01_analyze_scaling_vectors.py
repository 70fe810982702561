"""Exact scaling analysis of a few targets, no simulation.

A scaling vector lists how the variance of each component grows with the
dimension d.  The analyzer decides the proposal exponent alpha (so that the
proposal variance is ell^2 / d^alpha), whether the 0.234 rule applies, and
the optimal ell.
"""
from rwmscale import FiniteTerm, FixedK, GroupMember, GroupSpec, Mode, OrderTerm, ScalingVector, analyze
from rwmscale.experiments import ExperimentPlan, gaussian_scaling_vector


def show(title, sv, fisher=1.0):
    a = analyze(sv, fisher)
    print(f"{title}")
    print(f"  alpha={a.alpha}  condition={a.condition5.label}  mixing O(d^{a.mixing_order_exponent})")
    if a.condition5.holds:
        print(f"  E_R={a.e_r_homogeneous:.4g}  ell_hat={a.ell_hat:.4f}  AOAR={a.aoar:.4f}")
        if a.e_r_inhomogeneous != a.e_r_homogeneous:
            print(f"  inhomogeneous: E_R={a.e_r_inhomogeneous:.4g}  ell_hat={a.ell_hat_inhomogeneous:.4f}")
    print()


# One component with variance d, the rest unit variance.
big_first = ((OrderTerm(1, -1),), (GroupSpec(FixedK(1), 0),))
show("variances (d, 1, ..., 1), studying a unit component", ScalingVector(*big_first, GroupMember(0)))
show("variances (d, 1, ..., 1), studying the large component", ScalingVector(*big_first, FiniteTerm(0)))

# The same conclusions from the covariance spectrum alone.
for kind in ("intraclass", "hierarchical"):
    sv = gaussian_scaling_vector(ExperimentPlan(gaussian={"kind": kind}))
    show(f"{kind} Gaussian, exponents inferred from eigenvalues", sv)

# Logistic components are rougher per unit variance: ell_hat shrinks by sqrt(3).
show("i.i.d. logistic", ScalingVector((), (GroupSpec(FixedK(1), 0),), GroupMember(0)), fisher=1 / 3)

# Two groups of different orders: a per-group proposal exponent changes E_R.
two = ScalingVector((), (GroupSpec(FixedK(1), 0, 0.5), GroupSpec(FixedK(1), "-1/2", 0.5)), GroupMember(1))
show("half the components with variance sqrt(d)", two)
