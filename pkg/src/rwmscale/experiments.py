"""Studies that set the analyzer's predictions against sampler measurements.

Every chain draws from its own ``SeedSequence(seed, spawn_key=(study, d, rep))``.
Within one replicate all cells of the ell grid share that stream (common
random numbers), which keeps the efficiency curve smooth in ell; the
streams never depend on execution order, so thread pools give identical
results.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import diffusion
from .asymptotics import (
    FiniteTerm,
    GroupMember,
    Mode,
    ScalingAnalysis,
    ScalingVector,
    analyze,
)
from .sampler import (
    ChainDiagnostics,
    ProposalSpec,
    RecordOptions,
    acceptance_with_se,
    empirical_r,
    run_chain,
)
from .target import (
    GaussianTarget,
    ProductTarget,
    classify_spectrum,
    covariance_builder,
    get_family,
    product_from_scaling,
)

log = logging.getLogger(__name__)

STUDIES = {"simulate": 1, "sweep": 2, "scan": 3, "violation": 4, "compare": 5, "er": 6, "em": 7}

#: tolerance policy, copied into every manifest
POLICY = {
    "sweep_acceptance_band": [0.18, 0.30],
    "ell_ratio_rel_tol": 0.15,
    "esjd_speed_rel_tol": 0.15,
    "significance_se": 2.0,
    "acf_max_deviation": 0.05,
    "argmax_fit": "quadratic in log(ell) through the best grid point and its neighbours",
}


def log_grid(lo: float, hi: float, n: int = 13) -> tuple:
    return tuple(float(v) for v in np.geomspace(lo, hi, n))


@dataclass(frozen=True)
class ExperimentPlan:
    """Declarative description of a study.

    Either ``family`` with a ``scaling_vector`` (product target) or
    ``gaussian`` (``{"kind": ..., **params}``) is used.  For Gaussian
    targets ``istar`` selects the eigen-coordinate: ``"bulk"``,
    ``"largest"`` or ``"smallest"``.
    """

    family: str = "normal"
    scaling_vector: Optional[ScalingVector] = None
    gaussian: Optional[dict] = None
    spectrum_grid: tuple = (50, 100, 200, 400)
    istar: str = "bulk"
    mode: Mode = Mode.HOMOGENEOUS
    ell_grid: tuple = field(default_factory=lambda: log_grid(0.5, 5.0))
    d_list: tuple = (100,)
    iterations: int = 100_000
    replicates: int = 2
    seed: int = 0
    threads: int = 1
    dt: float = 0.1
    lags: tuple = tuple(round(0.1 * k, 10) for k in range(1, 21))
    n_draws: int = 200
    bootstrap: int = 400

    def __post_init__(self):
        if not self.ell_grid or not self.d_list:
            raise ValueError("ell_grid and d_list must be nonempty")
        if self.replicates < 1 or self.iterations < 1:
            raise ValueError("replicates and iterations must be positive")
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.scaling_vector is None and self.gaussian is None:
            raise ValueError("a plan needs a scaling_vector or a gaussian target")


@dataclass
class Cell:
    """Everything needed to run chains at one dimension."""

    d: int
    target: ProductTarget
    analysis: ScalingAnalysis
    esjd_class: tuple
    alpha_istar: Fraction

    def proposal(self, ell: float, mode: Mode) -> ProposalSpec:
        if mode is Mode.HOMOGENEOUS:
            return ProposalSpec(ell, self.analysis.alpha)
        return ProposalSpec(ell, tuple(self.target.alphas))

    @property
    def holds(self) -> bool:
        return self.analysis.condition5.holds


def _select_gaussian_istar(sv: ScalingVector, selector: str) -> ScalingVector:
    if selector == "bulk":
        i = max(range(len(sv.groups)), key=lambda k: (sv.groups[k].card_exponent, sv.groups[k].card_coeff))
        return replace(sv, component_of_interest=GroupMember(i))
    # exponent order: larger exponent means smaller variance
    candidates = [(t.exponent, FiniteTerm(j)) for j, t in enumerate(sv.finite_terms)]
    candidates += [(g.gamma, GroupMember(i)) for i, g in enumerate(sv.groups)]
    if selector == "largest":
        ref = min(candidates, key=lambda c: c[0])[1]
    elif selector == "smallest":
        ref = max(candidates, key=lambda c: c[0])[1]
    else:
        raise ValueError(f"unknown component selector {selector!r}")
    return replace(sv, component_of_interest=ref)


def gaussian_scaling_vector(plan: ExperimentPlan) -> ScalingVector:
    spec = dict(plan.gaussian)
    kind = spec.pop("kind")
    sv = plan.scaling_vector
    if sv is None:
        sv = classify_spectrum(covariance_builder(kind, **spec), plan.spectrum_grid)
    return _select_gaussian_istar(sv, plan.istar)


def _gaussian_target(plan: ExperimentPlan, d: int) -> GaussianTarget:
    spec = dict(plan.gaussian)
    kind = spec.pop("kind")
    if kind == "intraclass":
        return GaussianTarget.intraclass(d, spec.get("diag", 2.0), spec.get("offdiag", 1.0))
    if kind == "hierarchical":
        return GaussianTarget.hierarchical(d)
    if kind == "identity":
        return GaussianTarget.diagonal(np.ones(d))
    raise ValueError(f"unknown gaussian kind {kind!r}")


def build_cell(plan: ExperimentPlan, d: int) -> Cell:
    if plan.gaussian is not None:
        sv = gaussian_scaling_vector(plan)
        analysis = analyze(sv, 1.0)
        g = _gaussian_target(plan, d)
        w, _ = g.eigh
        pos = {"bulk": d // 2, "largest": d - 1, "smallest": 0}[plan.istar]
        target = g.eigen_product(reference=pos)
        target = replace(target, alpha=analysis.alpha, alphas=None)
        same = np.flatnonzero(np.abs(w - w[pos]) <= 1e-8 * w[pos])
        if plan.mode is Mode.INHOMOGENEOUS:
            raise ValueError("inhomogeneous proposals are only supported for product targets")
        return Cell(d, target, analysis, tuple(int(j) for j in same), analysis.alpha)
    fam = get_family(plan.family)
    analysis = analyze(plan.scaling_vector, fam.fisher)
    rng = np.random.default_rng(np.random.SeedSequence(plan.seed, spawn_key=(0, d)))
    target = product_from_scaling(analysis.normalized, d, fam, rng)
    term = analysis.normalized.finite_terms[target.istar]
    if term.member_of is not None:
        members = (target.istar,) + tuple(int(j) for j in target.group_members(term.member_of))
    else:
        members = (target.istar,)
    alpha_istar = target.alphas[target.istar] if plan.mode is Mode.INHOMOGENEOUS else analysis.alpha
    return Cell(d, target, analysis, members, Fraction(alpha_istar))


def cell_seed(plan: ExperimentPlan, study: str, d: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(plan.seed, spawn_key=(STUDIES[study], int(d), int(rep)))


def _map(plan: ExperimentPlan, fn, tasks):
    if plan.threads > 1:
        with ThreadPoolExecutor(plan.threads) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


# -- sweep ------------------------------------------------------------------


@dataclass
class SweepResult:
    """Rows per ``(d, ell)`` plus per-dimension optimum summaries.

    ``curves[d]`` holds the per-replicate acceptance and rescaled ESJD
    arrays (shape ``replicates x len(ell_grid)``) used for the bootstrap.
    """

    rows: list
    optima: dict
    holds: bool
    curves: dict = field(default_factory=dict)

    def optimum(self, d: int) -> dict:
        return self.optima[d]


def _fit_peak(ells: np.ndarray, esjd: np.ndarray, acc: np.ndarray) -> tuple[float, float, bool]:
    """Vertex of the quadratic (in log ell) through the best point and its neighbours."""
    k = int(np.nanargmax(esjd))
    if k == 0 or k == len(ells) - 1:
        return float(ells[k]), float(acc[k]), True
    x = np.log(ells[k - 1:k + 2])
    c = np.polyfit(x, esjd[k - 1:k + 2], 2)
    if c[0] >= 0:
        return float(ells[k]), float(acc[k]), True
    xv = float(np.clip(-c[1] / (2 * c[0]), x[0], x[-1]))
    ca = np.polyfit(x, acc[k - 1:k + 2], 2)
    return float(math.exp(xv)), float(np.polyval(ca, xv)), False


def _optimum_summary(ells, acc_reps, esjd_reps, n_boot, seed) -> dict:
    acc_mean, esjd_mean = acc_reps.mean(axis=0), esjd_reps.mean(axis=0)
    ell_opt, acc_opt, edge = _fit_peak(ells, esjd_mean, acc_mean)
    rng = np.random.default_rng(seed)
    reps = acc_reps.shape[0]
    boot_ell, boot_acc = [], []
    if reps >= 2:
        for _ in range(n_boot):
            pick = rng.integers(0, reps, reps)
            e, a, _ = _fit_peak(ells, esjd_reps[pick].mean(axis=0), acc_reps[pick].mean(axis=0))
            boot_ell.append(e)
            boot_acc.append(a)
    if boot_acc:
        acc_se = float(np.std(boot_acc, ddof=1))
        ell_se = float(np.std(boot_ell, ddof=1))
        ci = (float(np.quantile(boot_acc, 0.025)), float(np.quantile(boot_acc, 0.975)))
    else:
        acc_se = ell_se = math.nan
        ci = (math.nan, math.nan)
    return {
        "ell_opt": ell_opt,
        "ell_opt_se": ell_se,
        "accept_opt": acc_opt,
        "accept_opt_se": acc_se,
        "accept_opt_ci": ci,
        "at_grid_edge": edge,
    }


def _run_replicate(plan: ExperimentPlan, cell: Cell, study: str, rep: int, ells) -> list:
    seed = cell_seed(plan, study, cell.d, rep)
    record = RecordOptions(esjd_class=cell.esjd_class, budget=0)
    out = []
    for ell in ells:
        diag = run_chain(cell.target, cell.proposal(ell, plan.mode), plan.iterations,
                         record=record, seed=seed)
        out.append(diag)
    return out


def sweep_ell(plan: ExperimentPlan, study: str = "sweep") -> SweepResult:
    """Run ``replicates`` chains for every ``(d, ell)`` and locate the efficiency optimum."""
    ells = np.asarray(plan.ell_grid, dtype=float)
    rows, optima, curves = [], {}, {}
    holds = True
    for d in plan.d_list:
        cell = build_cell(plan, d)
        holds = holds and cell.holds
        if plan.iterations < 10 * cell.target.d ** float(cell.alpha_istar):
            log.warning("d=%d: %d iterations is below 10*d^alpha", d, plan.iterations)
        tasks = list(range(plan.replicates))
        results = _map(plan, lambda rep: _safe_replicate(plan, cell, study, rep, ells), tasks)
        acc = np.full((plan.replicates, ells.size), np.nan)
        acc_se = np.full_like(acc, np.nan)
        esjd = np.full_like(acc, np.nan)
        esjd_se = np.full_like(acc, np.nan)
        errors = {}
        for rep, res in enumerate(results):
            if isinstance(res, Exception):
                errors[rep] = f"{type(res).__name__}: {res}"
                continue
            for k, diag in enumerate(res):
                acc[rep, k], acc_se[rep, k] = acceptance_with_se(diag)
                esjd[rep, k], esjd_se[rep, k] = diag.class_esjd_rescaled()
        ok = ~np.isnan(acc[:, 0])
        e_r = cell.analysis.e_r(plan.mode)
        for k, ell in enumerate(ells):
            n_ok = int(ok.sum())
            row = {
                "d": d,
                "ell": float(ell),
                "replicates": n_ok,
                "accept_emp": float(np.mean(acc[ok, k])) if n_ok else math.nan,
                "accept_se": float(np.sqrt(np.sum(acc_se[ok, k] ** 2)) / n_ok) if n_ok else math.nan,
                "esjd_rescaled": float(np.mean(esjd[ok, k])) if n_ok else math.nan,
                "esjd_se": float(np.sqrt(np.sum(esjd_se[ok, k] ** 2)) / n_ok) if n_ok else math.nan,
                "error": "; ".join(f"rep {r}: {m}" for r, m in errors.items()),
            }
            if cell.holds:
                row["a_theory"] = diffusion.limiting_acceptance(ell, e_r)
                row["v_theory"] = diffusion.speed(ell, e_r)
            rows.append(row)
        if ok.any():
            boot_seed = np.random.SeedSequence(plan.seed, spawn_key=(STUDIES[study], int(d), 10**6))
            summary = _optimum_summary(ells, acc[ok], esjd[ok], plan.bootstrap, boot_seed)
        else:
            summary = {"ell_opt": math.nan, "accept_opt": math.nan, "accept_opt_se": math.nan}
        if ok.any() and math.isfinite(summary["ell_opt"]):
            # a bootstrap over few replicates understates the error; never report less than
            # the batch-means SE of the acceptance near the optimum
            k = int(np.argmin(np.abs(np.log(ells) - math.log(summary["ell_opt"]))))
            cell_se = float(np.sqrt(np.sum(acc_se[ok, k] ** 2)) / ok.sum())
            summary["accept_opt_bootstrap_se"] = summary["accept_opt_se"]
            summary["accept_opt_se"] = float(np.nanmax([summary["accept_opt_se"], cell_se]))
        summary["ell_hat_theory"] = cell.analysis.ell_for(plan.mode) if cell.holds else None
        summary["e_r"] = e_r
        optima[d] = summary
        curves[d] = {"accept": acc[ok], "esjd": esjd[ok]}
    return SweepResult(rows, optima, holds, curves)


def _safe_replicate(plan, cell, study, rep, ells):
    try:
        return _run_replicate(plan, cell, study, rep, ells)
    except Exception as exc:  # recorded per row, not fatal
        log.error("d=%d replicate %d failed: %s", cell.d, rep, exc)
        return exc


# -- dimension scan ------------------------------------------------------------


def scan_plan(lam: Fraction, family: str = "normal", **kw) -> ExperimentPlan:
    """Plan for the target with scaling terms ``(d^-lam, 1, ..., 1)``, studying the first component."""
    from .asymptotics import FixedK, GroupSpec, OrderTerm

    lam = Fraction(lam)
    if lam >= 1:
        raise ValueError("lam must be below 1 for the 0.234 regime")
    sv = ScalingVector((OrderTerm(1.0, lam),), (GroupSpec(FixedK(1.0), 0),), FiniteTerm(0))
    return ExperimentPlan(family=family, scaling_vector=sv, **kw)


def dimension_scan(plan: ExperimentPlan) -> list:
    """Acceptance at the predicted optimum and at the empirical optimum, for each d."""
    sweep = sweep_ell(plan, study="scan")
    out = []
    for d in plan.d_list:
        opt = sweep.optima[d]
        ell_hat = opt["ell_hat_theory"]
        rows = [r for r in sweep.rows if r["d"] == d]
        ells = np.array([r["ell"] for r in rows])
        accs = np.array([r["accept_emp"] for r in rows])
        acc_at_hat = float(np.interp(math.log(ell_hat), np.log(ells), accs)) if ell_hat else math.nan
        out.append({
            "d": d,
            "ell_hat": ell_hat,
            "accept_at_ell_hat": acc_at_hat,
            "ell_opt": opt["ell_opt"],
            "accept_opt": opt["accept_opt"],
            "accept_opt_se": opt["accept_opt_se"],
            "at_grid_edge": opt.get("at_grid_edge", False),
        })
    return out


# -- violated condition ----------------------------------------------------------


@dataclass
class ViolationReport:
    verdict: str
    alpha: Fraction
    numerator_exponent: Optional[Fraction]
    denominator_exponent: Fraction
    sweep: SweepResult
    below_reference: dict  # d -> bool: optimum below 0.234 by more than the significance margin


def violation_demo(plan: ExperimentPlan) -> ViolationReport:
    cell = build_cell(plan, plan.d_list[0])
    cond = cell.analysis.condition5
    if cond.holds:
        raise ValueError("violation_demo expects a target that violates the condition")
    sweep = sweep_ell(plan, study="violation")
    below = {}
    for d, opt in sweep.optima.items():
        margin = POLICY["significance_se"] * opt["accept_opt_se"]
        below[d] = bool(opt["accept_opt"] < diffusion.REFERENCE_AOAR - margin)
    return ViolationReport(cond.label, cell.analysis.alpha, cond.numerator_exponent,
                           cond.denominator_exponent, sweep, below)


# -- chain versus diffusion ---------------------------------------------------------


@dataclass
class CompareReport:
    d: int
    ell: float
    v: float
    lags: np.ndarray
    acf_theory: np.ndarray
    acf_chain: np.ndarray
    acf_em: np.ndarray
    max_dev_chain: float
    max_dev_em: float
    degenerate: bool
    effective_samples: float
    chain_path: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))  # (t, z)
    em_path: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))


def diffusion_compare(plan: ExperimentPlan, ell: float, d: Optional[int] = None,
                      n_tracked: int = 16, horizon: float = 2000.0, rep: int = 0) -> CompareReport:
    """Autocorrelation of the rescaled chain against the Ornstein-Uhlenbeck limit and an EM path.

    ``horizon`` is the rescaled time span; up to ``n_tracked`` exchangeable
    components are recorded and their ACFs pooled.
    """
    if plan.gaussian is None and plan.family != "normal":
        raise ValueError("diffusion_compare needs a normal family: the analytic ACF is the OU one")
    d = plan.d_list[0] if d is None else d
    cell = build_cell(plan, d)
    if not cell.holds:
        raise ValueError("diffusion_compare needs a target for which the condition holds")
    e_r = cell.analysis.e_r(plan.mode)
    v = diffusion.speed(ell, e_r)
    lags = np.asarray(plan.lags, dtype=float)
    theory = diffusion.ou_autocorrelation(lags, v)
    if ell == 0:
        ones = np.ones_like(lags)
        return CompareReport(d, ell, 0.0, lags, theory, ones, ones, 0.0, 0.0, True, 0.0)
    time_scale = float(d) ** float(cell.alpha_istar)
    iterations = int(math.ceil(horizon * time_scale))
    tracked = cell.esjd_class[:n_tracked]
    record = RecordOptions(track=tracked, dt=plan.dt, budget=int(horizon / plan.dt) + 1,
                           esjd_class=cell.esjd_class)
    diag = run_chain(cell.target, cell.proposal(ell, plan.mode), iterations, record=record,
                     seed=cell_seed(plan, "compare", d, rep))
    step = diag.thin / time_scale
    lag_idx = np.rint(lags / step).astype(int)
    acf_chain = diffusion.autocorrelation(diag.trajectory, lag_idx)
    params = diffusion.DiffusionParams(v, get_family("normal"), dt=min(0.01, 0.1 / v))
    em_rng = np.random.default_rng(cell_seed(plan, "em", d, rep))
    n_em = int(math.ceil(horizon / params.dt))
    z0 = em_rng.standard_normal(len(tracked))
    path = diffusion.euler_maruyama(params, z0, n_em, em_rng)
    sub = max(1, int(round(step / params.dt)))
    em = path[::sub]
    acf_em = diffusion.autocorrelation(em, np.rint(lags / (sub * params.dt)).astype(int))
    # effective sample size of the pooled series, for the OU integrated autocorrelation time 4/v
    ess = len(tracked) * horizon * v / 4.0
    if ess < 1000:
        log.warning("compare: effective sample size %.0f is small", ess)
    chain_path = np.column_stack([diag.times, diag.trajectory[:, 0]])
    em_path = np.column_stack([np.arange(em.shape[0]) * sub * params.dt, em[:, 0]])
    return CompareReport(
        d, ell, v, lags, theory, acf_chain, acf_em,
        float(np.max(np.abs(acf_chain - theory))), float(np.max(np.abs(acf_em - theory))),
        False, ess, chain_path, em_path,
    )


# -- roughness convergence ----------------------------------------------------------


def er_convergence(plan: ExperimentPlan, seeds: int = 1) -> list:
    """Sum of the roughness statistics against the analyzer's E_R, for each d.

    With ``seeds > 1`` the RMS deviation of single-draw sums over
    independent seeds is reported as well.
    """
    out = []
    for d in plan.d_list:
        cell = build_cell(plan, d)
        e_r = cell.analysis.e_r_homogeneous
        est = empirical_r(cell.target, plan.n_draws,
                          np.random.default_rng(cell_seed(plan, "er", d, 0)), cell.analysis.alpha)
        row = {
            "d": d,
            "e_r": e_r,
            "sum_R": est.total_mean,
            "sum_R_se": est.total_se,
            "rel_error": abs(est.total_mean - e_r) / e_r,
        }
        if seeds > 1:
            devs = []
            for s in range(seeds):
                one = empirical_r(cell.target, 1, np.random.default_rng(cell_seed(plan, "er", d, s + 1)),
                                  cell.analysis.alpha)
                devs.append(one.total_mean - e_r)
            row["rms_deviation"] = float(np.sqrt(np.mean(np.square(devs))))
        out.append(row)
    return out


# -- simulate ----------------------------------------------------------------


def simulate(plan: ExperimentPlan, ell: Optional[float] = None) -> list:
    """One chain per ``(d, replicate)`` at ``ell`` (default: the predicted optimum)."""
    out = []
    for d in plan.d_list:
        cell = build_cell(plan, d)
        ell_d = ell if ell is not None else (cell.analysis.ell_for(plan.mode) or plan.ell_grid[0])

        def one(rep, cell=cell, ell_d=ell_d, d=d):
            return run_chain(cell.target, cell.proposal(ell_d, plan.mode), plan.iterations,
                             record=RecordOptions(esjd_class=cell.esjd_class),
                             seed=cell_seed(plan, "simulate", d, rep))

        out.extend(_map(plan, one, range(plan.replicates)))
    return out


def config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# -- archived runs ------------------------------------------------------------

MANIFEST_VERSION = 1
COMMANDS = ("simulate", "sweep", "scan", "compare")
EXIT_OK, EXIT_PARTIAL = 0, 3

SWEEP_COLUMNS = ["d", "ell", "replicates", "accept_emp", "accept_se", "esjd_rescaled", "esjd_se"]
THEORY_COLUMNS = ["a_theory", "v_theory"]
SCAN_COLUMNS = ["d", "ell_hat", "accept_at_ell_hat", "ell_opt", "accept_opt", "accept_opt_se", "at_grid_edge"]
DIAGNOSTIC_COLUMNS = ["ell", "d", "alpha", "iterations", "accept_rate", "accept_se",
                      "esjd_istar", "esjd_rescaled", "sum_R", "seed"]


@dataclass
class RunOutcome:
    command: str
    out_dir: object
    files: list
    failures: list
    lines: list

    @property
    def exit_code(self) -> int:
        return EXIT_PARTIAL if self.failures else EXIT_OK


def _plain(obj):
    """JSON-safe copy: Fractions become strings, NaN becomes null."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Mode):
        return obj.value
    return obj


def _seed_text(seq: np.random.SeedSequence) -> str:
    return f"{seq.entropy}:{'/'.join(map(str, seq.spawn_key))}"


def _versions() -> dict:
    import platform
    from importlib import metadata

    out = {"python": platform.python_version()}
    for dist in ("artifact", "numpy", "scipy", "numba", "pydantic", "PyYAML"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


class _Archive:
    def __init__(self, out_dir):
        from pathlib import Path

        self.root = Path(out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files = {}

    def _record(self, name: str, data: bytes):
        (self.root / name).write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def csv(self, name: str, columns: Sequence[str], rows: Sequence[dict]):
        import csv
        import io

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])
        self._record(name, buf.getvalue().encode())

    def json(self, name: str, doc):
        self._record(name, (json.dumps(_plain(doc), indent=2, sort_keys=True) + "\n").encode())

    def text(self, name: str, lines: Sequence[str]):
        self._record(name, ("\n".join(lines) + "\n").encode())


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _study_seeds(plan: ExperimentPlan, study: str) -> list:
    seeds = [_seed_text(cell_seed(plan, study, d, rep)) for d in plan.d_list for rep in range(plan.replicates)]
    if plan.gaussian is None:
        seeds += [_seed_text(np.random.SeedSequence(plan.seed, spawn_key=(0, d))) for d in plan.d_list]
    return seeds


def _analysis_lines(analysis: ScalingAnalysis, mode: Mode) -> list:
    cond = analysis.condition5
    lines = [f"alpha={analysis.alpha}", f"condition5={cond.label}"]
    if cond.holds:
        lines += [f"E_R={analysis.e_r(mode):.6g}", f"ell_hat={analysis.ell_for(mode):.6g}",
                  f"AOAR={analysis.aoar:.3f}"]
    else:
        lines.append("no theoretical AOAR: the limit is not the 0.234 diffusion")
    return lines


def _run_simulate(plan, arc, fmt, ell):
    failures, rows, docs = [], [], []
    for d in plan.d_list:
        cell = build_cell(plan, d)
        ell_d = ell if ell is not None else (cell.analysis.ell_for(plan.mode) or plan.ell_grid[0])

        def one(rep, cell=cell, ell_d=ell_d, d=d):
            try:
                return run_chain(cell.target, cell.proposal(ell_d, plan.mode), plan.iterations,
                                 record=RecordOptions(esjd_class=cell.esjd_class),
                                 seed=cell_seed(plan, "simulate", d, rep))
            except Exception as exc:
                return exc

        for rep, res in enumerate(_map(plan, one, range(plan.replicates))):
            if isinstance(res, Exception):
                failures.append(f"d={d} rep={rep}: {type(res).__name__}: {res}")
                continue
            rows.append(res.csv_row())
            docs.append(json.loads(res.to_json()))
    if fmt == "json":
        arc.json("diagnostics.json", {"schema_version": 1, "chains": docs})
    else:
        arc.csv("diagnostics.csv", DIAGNOSTIC_COLUMNS, rows)
    summary = {"chains": rows}
    lines = [f"d={r['d']} ell={r['ell']:.4g} accept={r['accept_rate']:.4f}+-{r['accept_se']:.4f} "
             f"esjd_rescaled={r['esjd_rescaled']:.4g}" for r in rows]
    return summary, lines, failures, _study_seeds(plan, "simulate")


def _write_sweep(arc, fmt, sweep: SweepResult, name="sweep"):
    columns = SWEEP_COLUMNS + (THEORY_COLUMNS if sweep.holds else []) + ["error"]
    if fmt == "json":
        arc.json(f"{name}.json", {"schema_version": 1, "columns": columns, "rows": sweep.rows})
    else:
        arc.csv(f"{name}.csv", columns, sweep.rows)
    failures = sorted({f"d={r['d']}: {r['error']}" for r in sweep.rows if r["error"]})
    return failures


def _theory_curve(arc, plan, e_r):
    ells = log_grid(min(plan.ell_grid), max(plan.ell_grid), 101)
    rows = [{"ell": e, "a_theory": diffusion.limiting_acceptance(e, e_r), "v_theory": diffusion.speed(e, e_r)}
            for e in ells]
    arc.csv("theory.csv", ["ell", "a_theory", "v_theory"], rows)


def _run_sweep(plan, arc, fmt, ell):
    first = build_cell(plan, plan.d_list[0])
    summary = {"analysis": _analysis_lines(first.analysis, plan.mode)}
    if first.holds:
        study = "sweep"
        sweep = sweep_ell(plan, study)
        _theory_curve(arc, plan, first.analysis.e_r(plan.mode))
    else:
        study = "violation"
        report = violation_demo(plan)
        sweep = report.sweep
        summary["below_reference"] = report.below_reference
    failures = _write_sweep(arc, fmt, sweep)
    summary["optima"] = sweep.optima
    lines = []
    for d, opt in sweep.optima.items():
        line = f"d={d} ell_opt={opt['ell_opt']:.4g} accept_opt={opt['accept_opt']:.4f}+-{opt['accept_opt_se']:.4f}"
        if opt.get("ell_hat_theory"):
            line += f" ell_hat={opt['ell_hat_theory']:.4g}"
        if "below_reference" in summary:
            line += f" below_0.234={summary['below_reference'][d]}"
        lines.append(line)
    seeds = _study_seeds(plan, study)
    seeds += [_seed_text(np.random.SeedSequence(plan.seed, spawn_key=(STUDIES[study], int(d), 10**6)))
              for d in plan.d_list]
    return summary, lines, failures, seeds


def _run_scan(plan, arc, fmt, ell):
    rows = dimension_scan(plan)
    if fmt == "json":
        arc.json("scan.json", {"schema_version": 1, "columns": SCAN_COLUMNS, "rows": rows})
    else:
        arc.csv("scan.csv", SCAN_COLUMNS, rows)
    lines = [f"d={r['d']} accept_opt={r['accept_opt']:.4f}+-{r['accept_opt_se']:.4f} "
             f"accept_at_ell_hat={r['accept_at_ell_hat']:.4f}" for r in rows]
    failures = [f"d={r['d']}: no usable replicate" for r in rows if not math.isfinite(r["accept_opt"])]
    seeds = _study_seeds(plan, "scan")
    seeds += [_seed_text(np.random.SeedSequence(plan.seed, spawn_key=(STUDIES["scan"], int(d), 10**6)))
              for d in plan.d_list]
    return {"scan": rows}, lines, failures, seeds


def _run_compare(plan, arc, fmt, ell, horizon=2000.0):
    ell = diffusion.REFERENCE_ELL if ell is None else ell
    reports, lines, seeds = [], [], []
    for d in plan.d_list:
        rep = diffusion_compare(plan, ell, d, horizon=horizon)
        rows = [{"d": d, "tau": t, "acf_theory": a, "acf_chain": b, "acf_em": c}
                for t, a, b, c in zip(rep.lags, rep.acf_theory, rep.acf_chain, rep.acf_em)]
        reports.append({"d": d, "ell": ell, "v": rep.v, "max_dev_chain": rep.max_dev_chain,
                        "max_dev_em": rep.max_dev_em, "degenerate": rep.degenerate,
                        "effective_samples": rep.effective_samples, "acf": rows})
        arc.csv(f"acf_d{d}.csv", ["tau", "acf_theory", "acf_chain", "acf_em"], rows)
        for name, path in (("chain", rep.chain_path), ("em", rep.em_path)):
            arc.csv(f"trajectory_{name}_d{d}.csv", ["t", "z"], [{"t": t, "z": z} for t, z in path])
        lines.append(f"d={d} ell={ell:.4g} v={rep.v:.4g} max_dev_chain={rep.max_dev_chain:.4f} "
                     f"max_dev_em={rep.max_dev_em:.4f}")
        seeds += [_seed_text(cell_seed(plan, "compare", d, 0)), _seed_text(cell_seed(plan, "em", d, 0))]
    return {"compare": reports}, lines, [], seeds


_RUNNERS = {"simulate": _run_simulate, "sweep": _run_sweep, "scan": _run_scan, "compare": _run_compare}


def run_plan(plan: ExperimentPlan, command: str, out_dir, config_doc: Optional[dict] = None,
             fmt: str = "csv", ell: Optional[float] = None, **kw) -> RunOutcome:
    """Execute one study and archive it in ``out_dir``.

    Writes the study's CSV (or JSON) tables, ``summary.json``, a plain
    text ``report.txt`` and ``manifest.json``.  The manifest carries the
    full configuration, its hash, every cell seed, package versions and the
    tolerance policy; nothing time-dependent is written, so re-running the
    manifest reproduces every table byte for byte.
    """
    if command not in _RUNNERS:
        raise ValueError(f"unknown command {command!r}; expected one of {COMMANDS}")
    if fmt not in ("csv", "json"):
        raise ValueError("fmt must be 'csv' or 'json'")
    arc = _Archive(out_dir)
    summary, lines, failures, seeds = _RUNNERS[command](plan, arc, fmt, ell, **kw)
    summary = {"schema_version": 1, "command": command, "status": "partial" if failures else "ok",
               "failures": failures, **summary}
    arc.json("summary.json", summary)
    report = [f"command: {command}", f"status: {summary['status']}"]
    report += [f"failure: {f}" for f in failures] + lines
    arc.text("report.txt", report)
    doc = config_doc if config_doc is not None else {}
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "format": fmt,
        "ell": ell,
        "config": doc,
        "config_hash": config_hash(_plain(doc)),
        "seeds": seeds,
        "versions": _versions(),
        "policy": POLICY,
        "outputs": dict(sorted(arc.files.items())),
    }
    arc.json("manifest.json", manifest)
    return RunOutcome(command, arc.root, sorted(arc.files) + ["manifest.json"], failures, lines)
