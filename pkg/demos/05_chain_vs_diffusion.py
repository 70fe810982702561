"""The rescaled chain against its Langevin limit.

Speeding time up by d, one coordinate of RWM on an i.i.d. normal target
behaves like an Ornstein-Uhlenbeck process with speed v(ell), whose
autocorrelation is exp(-v tau / 2).  We compare the chain, an
Euler-Maruyama path of the limit, and the formula.
"""
from rwmscale import FixedK, GroupMember, GroupSpec, ScalingVector
from rwmscale.experiments import ExperimentPlan, diffusion_compare

plan = ExperimentPlan(scaling_vector=ScalingVector((), (GroupSpec(FixedK(1), 0),), GroupMember(0)), seed=5)
for d in (50, 200):
    rep = diffusion_compare(plan, 2.38, d, horizon=1000)
    print(f"d={d}: v={rep.v:.4f}, max |ACF chain - OU| = {rep.max_dev_chain:.4f}, "
          f"max |ACF EM - OU| = {rep.max_dev_em:.4f}")
    for tau, th, ch, em in list(zip(rep.lags, rep.acf_theory, rep.acf_chain, rep.acf_em))[::4]:
        print(f"   tau={tau:4.1f}  OU {th:.4f}  chain {ch:.4f}  EM {em:.4f}")
