"""Acceptance suite: one test and one printed PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (the lines are printed even
when output capture is on) or directly with ``python3 tests/test_acceptance.py``.
Simulation budgets are the ones confirmed by pilot runs; tolerances are
fixed constants below.
"""
import json
import math
import sys
import time
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from rwmscale import asymptotics as asy
from rwmscale import cli, diffusion
from rwmscale import experiments as ex
from rwmscale.asymptotics import FixedK, GroupMember, GroupSpec, ScalingVector
from rwmscale.sampler import ProposalSpec, RecordOptions, acceptance_with_se, run_chain
from rwmscale.target import ProductTarget

# tolerances
REFERENCE_AOAR = 0.234
U_RANGE = (2.37, 2.39)
AOAR_RANGE = (0.2330, 0.2350)
ACCEPT_TOL_D100 = 0.02
ESJD_REL_TOL = 0.15
SWEEP_BAND = (0.18, 0.30)
ELL_RATIO_REL_TOL = 0.15
R_TOL = {1000: 0.05, 10_000: 0.02}
SIGNIFICANCE_SE = 2.0
LAMBDA0_TOL = 0.03
ACF_TOL = 0.05
MOMENT_SE = 4.0
FAST_SECONDS = 1.0

IID = ScalingVector((), (GroupSpec(FixedK(1), 0),), GroupMember(0))
INTRACLASS = ScalingVector((asy.OrderTerm(1, -1),), (GroupSpec(FixedK(1), 0),), GroupMember(0))

_ECHO = {"capsys": None}


@pytest.fixture(autouse=True)
def _echo(capsys):
    _ECHO["capsys"] = capsys
    yield
    _ECHO["capsys"] = None


def verdict(number: int, ok: bool, detail: str):
    line = f"[criterion {number:2d}] {'PASS' if ok else 'FAIL'}: {detail}"
    capsys = _ECHO["capsys"]
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line, flush=True)
    else:
        print(line, flush=True)
    assert ok, line


def iid_plan(**kw):
    return ex.ExperimentPlan(scaling_vector=IID, **kw)


# 1 ---------------------------------------------------------------------------


def test_criterion_01_intraclass_analysis_exact():
    start = time.perf_counter()
    bulk = asy.analyze(INTRACLASS)
    first = asy.analyze(ScalingVector(INTRACLASS.finite_terms, INTRACLASS.groups, asy.FiniteTerm(0)))
    plan = ex.ExperimentPlan(gaussian={"kind": "intraclass"}, istar="bulk")
    classified = asy.analyze(ex.gaussian_scaling_vector(plan))
    elapsed = time.perf_counter() - start
    ok = (bulk.alpha == 1 and first.alpha == 2 and bulk.condition5.holds and first.condition5.holds
          and bulk.mixing_order_exponent == 1 and first.mixing_order_exponent == 2
          and classified.alpha == 1 and classified.condition5.holds and elapsed < FAST_SECONDS)
    verdict(1, ok, f"bulk alpha={bulk.alpha} mixing O(d^{bulk.mixing_order_exponent}), first alpha={first.alpha} "
                   f"mixing O(d^{first.mixing_order_exponent}), condition {bulk.condition5.label}/"
                   f"{first.condition5.label}, from spectrum alpha={classified.alpha}, {elapsed:.2f}s")


# 2 ---------------------------------------------------------------------------


def test_criterion_02_hierarchical_violated():
    sv = ScalingVector((asy.OrderTerm(1, 1), asy.OrderTerm(1, -1)), (GroupSpec(FixedK(1), 0),), GroupMember(0))
    symbolic = asy.analyze(sv)
    from_spectrum = asy.analyze(ex.gaussian_scaling_vector(ex.ExperimentPlan(gaussian={"kind": "hierarchical"})))
    ok = not symbolic.condition5.holds and not from_spectrum.condition5.holds and symbolic.aoar is None
    verdict(2, ok, f"declared orders: {symbolic.condition5.label} (lambda_1={symbolic.condition5.numerator_exponent}"
                   f" vs {symbolic.condition5.denominator_exponent}); classified spectrum: "
                   f"{from_spectrum.condition5.label}")


# 3 ---------------------------------------------------------------------------


def test_criterion_03_constants():
    start = time.perf_counter()
    u, _ = diffusion.maximize_speed(1.0)
    aoar = float(2 * diffusion.norm_cdf(-u / 2))
    elapsed = time.perf_counter() - start
    ok = U_RANGE[0] <= u <= U_RANGE[1] and AOAR_RANGE[0] <= aoar <= AOAR_RANGE[1] and elapsed < FAST_SECONDS
    verdict(3, ok, f"u_hat={u:.6f} in {U_RANGE}, AOAR={aoar:.6f} in {AOAR_RANGE}, {elapsed:.3f}s")


# 4 ---------------------------------------------------------------------------


def test_criterion_04_iid_acceptance_d100():
    d = 100
    diag = run_chain(ProductTarget(np.ones(d)), ProposalSpec(2.38, 1), 10**6, seed=np.random.SeedSequence(4))
    rate, se = acceptance_with_se(diag)
    ok = abs(rate - REFERENCE_AOAR) <= ACCEPT_TOL_D100
    verdict(4, ok, f"acceptance {rate:.4f} +- {se:.4f} (10^6 iterations, d=100), |diff|={abs(rate - 0.234):.4f}"
                   f" <= {ACCEPT_TOL_D100}")


# 5 ---------------------------------------------------------------------------


def test_criterion_05_speed_identity_d200():
    d = 200
    v = diffusion.speed(2.38, 1.0)
    diag = run_chain(ProductTarget(np.ones(d)), ProposalSpec(2.38, 1), 400_000,
                     record=RecordOptions(esjd_class=tuple(range(d)), budget=0), seed=np.random.SeedSequence(5))
    pooled, se = diag.class_esjd_rescaled()
    single = diag.esjd_rescaled
    rel = abs(pooled - v) / v
    ok = rel <= ESJD_REL_TOL
    verdict(5, ok, f"d^alpha ESJD={pooled:.4f} +- {se:.4f} (single component {single:.4f}) vs v(2.38)={v:.4f}, "
                   f"rel diff {rel:.3f} <= {ESJD_REL_TOL}")


# 6 ---------------------------------------------------------------------------


def test_criterion_06_sweep_optima():
    common = dict(d_list=(100,), iterations=100_000, replicates=4, seed=6, bootstrap=400)
    normal = ex.sweep_ell(iid_plan(ell_grid=ex.log_grid(0.5, 5.0, 13), **common))
    logistic = ex.sweep_ell(iid_plan(family="logistic", ell_grid=ex.log_grid(2.0, 7.0, 13), **common))
    intra = ex.sweep_ell(ex.ExperimentPlan(gaussian={"kind": "intraclass"}, istar="bulk",
                                           ell_grid=ex.log_grid(0.5, 5.0, 13), **common))
    opts = {"normal": normal.optimum(100), "logistic": logistic.optimum(100), "intraclass": intra.optimum(100)}
    in_band = {k: SWEEP_BAND[0] <= o["accept_opt"] <= SWEEP_BAND[1] and not o["at_grid_edge"]
               for k, o in opts.items()}
    predicted = math.sqrt(normal.optimum(100)["e_r"] / logistic.optimum(100)["e_r"])
    measured = opts["logistic"]["ell_opt"] / opts["normal"]["ell_opt"]
    ratio_ok = abs(measured / predicted - 1) <= ELL_RATIO_REL_TOL
    ok = all(in_band.values()) and ratio_ok
    detail = ", ".join(f"{k} accept_opt={o['accept_opt']:.4f} ell_opt={o['ell_opt']:.3f}" for k, o in opts.items())
    verdict(6, ok, f"{detail}; logistic/normal ell ratio {measured:.3f} vs sqrt(E_R ratio) {predicted:.3f}")


# 7 ---------------------------------------------------------------------------


def test_criterion_07_roughness_sum():
    rows = ex.er_convergence(iid_plan(d_list=(1000, 10_000), n_draws=200, seed=7))
    ok = all(r["rel_error"] <= R_TOL[r["d"]] for r in rows)
    verdict(7, ok, "; ".join(f"d={r['d']}: sum R={r['sum_R']:.4f} +- {r['sum_R_se']:.4f} vs E_R={r['e_r']:g}, "
                             f"rel err {r['rel_error']:.4f} <= {R_TOL[r['d']]}" for r in rows))


# 8 ---------------------------------------------------------------------------


def test_criterion_08_slow_convergence_from_above():
    slow = ex.dimension_scan(ex.scan_plan(Fraction(3, 4), d_list=(1000,), ell_grid=ex.log_grid(1.2, 4.0, 13),
                                          iterations=50_000, replicates=4, seed=8, bootstrap=400))[0]
    fast = ex.dimension_scan(ex.scan_plan(0, d_list=(100,), ell_grid=ex.log_grid(1.2, 4.0, 13),
                                          iterations=100_000, replicates=4, seed=8, bootstrap=400))[0]
    above = slow["accept_opt"] - REFERENCE_AOAR > SIGNIFICANCE_SE * slow["accept_opt_se"]
    close = abs(fast["accept_opt"] - REFERENCE_AOAR) <= LAMBDA0_TOL
    ok = above and close and not slow["at_grid_edge"] and not fast["at_grid_edge"]
    verdict(8, ok, f"lambda=3/4, d=1000: accept_opt={slow['accept_opt']:.4f} +- {slow['accept_opt_se']:.4f} "
                   f"(> 0.234 by {(slow['accept_opt'] - 0.234) / slow['accept_opt_se']:.1f} SE); "
                   f"lambda=0, d=100: accept_opt={fast['accept_opt']:.4f} within {LAMBDA0_TOL}")


# 9 ---------------------------------------------------------------------------


def test_criterion_09_weak_limit_properties():
    # OU autocorrelation
    rep = ex.diffusion_compare(iid_plan(d_list=(200,), seed=9), 2.38, 200, horizon=2000)
    acf_ok = rep.max_dev_chain <= ACF_TOL

    # stationary marginal of a tracked component
    d = 100
    diag = run_chain(ProductTarget(np.ones(d)), ProposalSpec(2.38, 1), 2_000_000,
                     record=RecordOptions(track=(0,), dt=1.0, budget=10**6), seed=np.random.SeedSequence(9))
    z = diag.trajectory[:, 0]
    horizon = diag.iterations / d
    v = diffusion.speed(2.38)
    se_mean, se_var = math.sqrt(4 / (v * horizon)), math.sqrt(4 / (v * horizon))
    z_mean_dev, z_var_dev = abs(z.mean()) / se_mean, abs(z.var() - 1) / se_var
    moments_ok = z_mean_dev < MOMENT_SE and z_var_dev < MOMENT_SE

    # analyzer against the numeric oracle
    rng = np.random.default_rng(99)
    vectors = [asy.random_scaling_vector(rng) for _ in range(200)]
    agree = sum(asy.oracle_agrees(sv)[0] for sv in vectors)

    # shift and dominance invariances
    inv_ok = True
    for k, sv in enumerate(vectors):
        c = Fraction(int(rng.integers(-12, 13)), 4)
        a, b = asy.analyze(sv), asy.analyze(sv.shifted(c))
        inv_ok &= (a.alpha, a.condition5, a.dominating_groups, a.normalized) == \
                  (b.alpha, b.condition5, b.dominating_groups, b.normalized)
        norm = a.normalized
        floor = min(g.order for g in norm.groups)
        low = GroupSpec(FixedK(1.0), floor - 2, 1.0, 1)
        pruned = replace(norm, groups=norm.groups + (low,))
        inv_ok &= (asy.compute_alpha(pruned) == a.alpha and asy.check_condition5(pruned) == a.condition5
                   and asy.dominating_groups(pruned) == a.dominating_groups)

    ok = acf_ok and moments_ok and agree == 200 and inv_ok
    verdict(9, ok, f"max ACF dev {rep.max_dev_chain:.4f} <= {ACF_TOL} (EM {rep.max_dev_em:.4f}); "
                   f"marginal mean {z_mean_dev:.1f} SE, variance {z_var_dev:.1f} SE (< {MOMENT_SE}); "
                   f"oracle {agree}/200; invariances {'exact' if inv_ok else 'broken'}")


# 10 --------------------------------------------------------------------------


def test_criterion_10_manifest_rerun_identical(tmp_path):
    cfg = tmp_path / "sweep.yaml"
    cfg.write_text(
        "target: {family: normal}\n"
        "scaling_vector:\n  groups: [{K: 1, gamma: \"0\"}]\n"
        "component_of_interest: {group: 0}\n"
        "experiment: {ell_grid: {min: 0.5, max: 5.0, n: 9}, d_list: [50, 100], iterations: 20000, replicates: 2}\n"
        "seed: 10\n"
    )
    identical, codes = True, []
    for command in ("sweep", "simulate", "scan"):
        first, second = tmp_path / f"{command}1", tmp_path / f"{command}2"
        codes.append(cli.main([command, "--config", str(cfg), "--out", str(first)]))
        codes.append(cli.main(["rerun", "--config", str(first / "manifest.json"), "--out", str(second)]))
        csvs = sorted(p.name for p in first.glob("*.csv"))
        identical &= bool(csvs) and all((first / n).read_bytes() == (second / n).read_bytes() for n in csvs)
        manifest = json.loads((first / "manifest.json").read_text())
        identical &= len(manifest["seeds"]) >= 4 and manifest["config_hash"] == ex.config_hash(manifest["config"])
    ok = identical and not any(codes)
    verdict(10, ok, f"sweep/simulate/scan re-run from manifest: CSVs byte-identical={identical}, exit codes {codes}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
