"""Command line interface.

Exit status: 0 when the condition holds (or a study completed), 2 when
``analyze`` finds the condition violated, 1 on errors, 3 when a study
finished with some failed cells.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import asymptotics as asy
from . import diffusion, experiments
from .config import AnalysisReport, Config, ConfigError, load_config
from .target import covariance_builder, fit_spectrum, get_family

EXIT_HOLDS, EXIT_ERROR, EXIT_VIOLATED = 0, 1, 2

log = logging.getLogger("rwmscale")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _order_text(e: Fraction) -> str:
    if e == 0:
        return "O(1)"
    if e == 1:
        return "O(d)"
    return f"O(d^{e})"


def _term_text(K: float, e: Fraction) -> str:
    return f"{K:.6g}/d^({e})" if e else f"{K:.6g}"


def _group_scale(g: asy.GroupSpec) -> str:
    if isinstance(g.constant_model, asy.FixedK):
        return _term_text(g.constant_model.K, g.gamma)
    return f"K/d^({g.gamma}), E[1/K]={g.constant_model.b:.6g}"


def _analysis_for(cfg: Config):
    plan = cfg.plan()
    if plan.gaussian is not None:
        sv = experiments.gaussian_scaling_vector(plan)
        return asy.analyze(sv, 1.0), plan
    return asy.analyze(plan.scaling_vector, get_family(plan.family).fisher), plan


def describe(a: asy.ScalingAnalysis) -> list[str]:
    norm = a.normalized
    coi = norm.component_of_interest.index
    terms = ", ".join(_term_text(t.constant, t.exponent) + ("*" if j == coi else "")
                      for j, t in enumerate(norm.finite_terms))
    groups = ", ".join(
        f"[{_group_scale(g)}] x {g.card_coeff:.6g}*d^({g.card_exponent})" for g in norm.groups
    )
    cond = a.condition5
    witness = (f"lambda_1={cond.numerator_exponent} vs max(gamma+beta)={cond.denominator_exponent}"
               if cond.numerator_exponent is not None else f"no finite terms, max(gamma+beta)={cond.denominator_exponent}")
    lines = [
        f"normalized: finite=({terms}) groups=({groups})  (* = component of interest)",
        f"alpha={a.alpha}",
        "alpha_per_group=" + ", ".join(str(x) for x in a.alpha_per_group),
        f"condition5={cond.label} ({witness})",
        f"E_R homogeneous={a.e_r_homogeneous:.6g} inhomogeneous={a.e_r_inhomogeneous:.6g}",
    ]
    if cond.holds:
        lines += [
            f"ell_hat={a.ell_hat:.6g} (inhomogeneous {a.ell_hat_inhomogeneous:.6g})",
            f"AOAR={a.aoar:.3f}",
        ]
    else:
        lines.append("ell_hat=n/a AOAR=n/a (0.234 need not be optimal)")
    lines.append(f"mixing {_order_text(a.mixing_order_exponent)}")
    summary = f"alpha={a.alpha}, condition5={cond.label}"
    if cond.holds:
        summary += f", AOAR={a.aoar:.3f}"
    lines.append(summary + f", mixing {_order_text(a.mixing_order_exponent)}")
    return lines


def _load(args) -> Config:
    overrides = {"seed": args.seed, "threads": args.threads}
    return load_config(args.config, overrides)


def _out_dir(args, cfg: Config):
    out = args.out or cfg.output_dir
    if out is None:
        raise ConfigError("no output directory: pass --out or set output_dir")
    return Path(out)


def cmd_analyze(args) -> int:
    cfg = _load(args)
    analysis, plan = _analysis_for(cfg)
    report = AnalysisReport.from_analysis(analysis)
    if args.format == "json":
        print(report.model_dump_json(indent=2, by_alias=True))
    else:
        print("\n".join(describe(analysis)))
    out = args.out or cfg.output_dir
    if out:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "analysis.json").write_text(report.model_dump_json(indent=2, by_alias=True) + "\n")
        if plan.gaussian is not None and cfg.scaling_vector is None:
            spec = dict(plan.gaussian)
            fit = fit_spectrum(covariance_builder(spec.pop("kind"), **spec), plan.spectrum_grid)
            arc = experiments._Archive(out)
            arc.csv("spectrum.csv", ["d", "eigen_index", "eigenvalue", "fitted_exponent", "cluster_id"],
                    [dict(zip(["d", "eigen_index", "eigenvalue", "fitted_exponent", "cluster_id"], r))
                     for r in fit.rows])
    return EXIT_HOLDS if analysis.condition5.holds else EXIT_VIOLATED


def _study(command):
    def run(args) -> int:
        cfg = _load(args)
        out = _out_dir(args, cfg)
        kw = {"horizon": cfg.experiment.horizon} if command == "compare" else {}
        ell = args.ell if getattr(args, "ell", None) is not None else cfg.experiment.ell
        doc = cfg.model_dump(mode="json", by_alias=True)
        outcome = experiments.run_plan(cfg.plan(), command, out, doc, fmt=args.format, ell=ell, **kw)
        for line in outcome.lines:
            print(line)
        for failure in outcome.failures:
            print(f"failed: {failure}", file=sys.stderr)
        print(f"wrote {len(outcome.files)} files to {outcome.out_dir}")
        return outcome.exit_code
    return run


def cmd_rerun(args) -> int:
    """Repeat the study recorded in a manifest."""
    try:
        manifest = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{args.config}: cannot read manifest ({exc})") from None
    if "manifest_version" not in manifest:
        raise ConfigError(f"{args.config}: not a manifest")
    args.format = manifest.get("format", "csv")
    args.ell = manifest.get("ell")
    return _study(manifest["command"])(args)


# -- selftest --------------------------------------------------------------------


def _check_constants():
    u, _ = diffusion.maximize_speed(1.0)
    aoar = float(2.0 * diffusion.norm_cdf(-u / 2.0))
    ok = 2.37 <= u <= 2.39 and 0.2330 <= aoar <= 0.2350
    return ok, f"u_hat={u:.6f} AOAR={aoar:.6f}"


def _check_stationarity():
    from scipy.optimize import brentq
    from scipy.stats import norm

    # d/du [u^2 Phi(-u/2)] = 0  <=>  4 Phi(-u/2) = u phi(u/2)
    root = brentq(lambda u: 4 * norm.cdf(-u / 2) - u * norm.pdf(u / 2), 1.0, 4.0, xtol=1e-14)
    u = diffusion.optimal_u()
    return abs(root - u) < 1e-6, f"brentq={root:.8f} golden={u:.8f}"


def _check_fisher():
    n, l = get_family("normal").fisher, get_family("logistic").fisher
    return abs(n - 1) < 1e-8 and abs(l - 1 / 3) < 1e-8, f"normal={n:.10f} logistic={l:.10f}"


def _check_oracle(n=200):
    rng = np.random.default_rng(20240601)
    bad = []
    for k in range(n):
        ok, msg = asy.oracle_agrees(asy.random_scaling_vector(rng))
        if not ok:
            bad.append(f"#{k}: {msg}")
    return not bad, f"{n - len(bad)}/{n} agree" + ("; " + bad[0] if bad else "")


def _check_invariances(n=200):
    rng = np.random.default_rng(7)
    for k in range(n):
        sv = asy.random_scaling_vector(rng)
        c = Fraction(int(rng.integers(-8, 9)), 4)
        a, b = asy.analyze(sv), asy.analyze(sv.shifted(c))
        if (a.alpha, a.condition5, a.dominating_groups) != (b.alpha, b.condition5, b.dominating_groups):
            return False, f"shift by {c} changed vector #{k}"
    return True, f"{n} shifted vectors unchanged"


def _check_gaussian_examples():
    from .experiments import ExperimentPlan, gaussian_scaling_vector

    def verdict(kind, istar):
        sv = gaussian_scaling_vector(ExperimentPlan(gaussian={"kind": kind}, istar=istar))
        return asy.analyze(sv)

    bulk, first = verdict("intraclass", "bulk"), verdict("intraclass", "largest")
    hier = verdict("hierarchical", "bulk")
    ok = (bulk.alpha == 1 and bulk.condition5.holds and first.alpha == 2 and first.condition5.holds
          and not hier.condition5.holds)
    return ok, (f"intraclass bulk alpha={bulk.alpha} first alpha={first.alpha}; "
                f"hierarchical {hier.condition5.label}")


SELFTEST_CHECKS = [
    ("speed maximiser and AOAR constants", _check_constants),
    ("stationarity root oracle", _check_stationarity),
    ("Fisher information constants", _check_fisher),
    ("analyzer vs brute-force limits (200 vectors)", _check_oracle),
    ("exponent-shift invariance", _check_invariances),
    ("intraclass and hierarchical verdicts", _check_gaussian_examples),
]


def cmd_selftest(args=None) -> int:
    failures = []
    start = time.perf_counter()
    for name, check in SELFTEST_CHECKS:
        try:
            ok, detail = check()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        if not ok:
            failures.append(name)
    print(f"selftest finished in {time.perf_counter() - start:.1f}s")
    if failures:
        print("failed checks: " + ", ".join(failures), file=sys.stderr)
        return EXIT_ERROR
    return EXIT_HOLDS


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="YAML or JSON config (or a manifest)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=_u64, metavar="U64", help="master seed (overrides config)")
    common.add_argument("--threads", type=_positive_int, metavar="N", help="worker threads")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="table format")

    parser = _Parser(prog="rwmscale", description="Optimal scaling analysis and RWM experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("analyze", parents=[common], help="exact scaling analysis").set_defaults(fn=cmd_analyze)
    for name, text in (("simulate", "run chains at one ell"), ("sweep", "sweep ell and locate the optimum"),
                       ("scan", "optimum acceptance across dimensions"),
                       ("compare", "chain and diffusion autocorrelations")):
        p = sub.add_parser(name, parents=[common], help=text)
        if name in ("simulate", "compare"):
            p.add_argument("--ell", type=float, help="proposal scale (default: config or prediction)")
        p.set_defaults(fn=_study(name))
    sub.add_parser("rerun", parents=[common], help="repeat a study from its manifest.json").set_defaults(fn=cmd_rerun)
    sub.add_parser("selftest", help="fast consistency checks").set_defaults(fn=cmd_selftest)
    return parser


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, ArithmeticError, OSError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
