"""Random-walk Metropolis with homogeneous or per-group proposal scaling.

Product targets run through a compiled kernel that evaluates the
acceptance ratio as a sum of per-component log-density increments.
Gaussian targets are run in their eigenbasis, where they are products of
normals; for an isotropic proposal this is the same chain in rotated
coordinates, so all diagnostics refer to eigen-coordinates.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

from . import _kernels
from .target import GaussianTarget, ProductTarget

SeedLike = Union[int, np.random.SeedSequence, None]


def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class ProposalSpec:
    """Gaussian random-walk proposal ``N(x, diag(ell^2 / d^alpha_j))``.

    ``alpha`` is a single exponent (homogeneous) or one per component.
    """

    ell: float
    alpha: Union[Fraction, tuple] = Fraction(1)

    def __post_init__(self):
        if not (self.ell >= 0 and math.isfinite(self.ell)):
            raise ValueError(f"ell must be nonnegative and finite, got {self.ell!r}")
        if isinstance(self.alpha, (list, np.ndarray)):
            object.__setattr__(self, "alpha", tuple(self.alpha))

    @property
    def homogeneous(self) -> bool:
        return not isinstance(self.alpha, tuple) or len(set(self.alpha)) <= 1

    @classmethod
    def inhomogeneous_for(cls, ell: float, target: ProductTarget) -> "ProposalSpec":
        return cls(ell, tuple(target.alphas))

    def scales(self, d: int, dim: Optional[int] = None) -> np.ndarray:
        """Per-component proposal standard deviations ``ell * d**(-alpha_j / 2)``."""
        if isinstance(self.alpha, tuple):
            alphas = np.array([float(a) for a in self.alpha])
            if dim is not None and alphas.size != dim:
                raise ValueError(f"{alphas.size} exponents for a {dim}-dimensional target")
        else:
            alphas = np.full(dim if dim is not None else 1, float(self.alpha))
        return self.ell * float(d) ** (-alphas / 2.0)


@dataclass(frozen=True)
class RecordOptions:
    """What to keep besides acceptance and jump sums.

    ``track`` lists components whose rescaled trajectory is stored every
    ``ceil(d**alpha_istar * dt)`` iterations, coarsened if needed so that at
    most ``budget`` points are kept.  ``esjd_class`` lists components that
    share the law of the component of interest; their mean squared jump is
    a lower-variance estimate of the same ESJD.
    """

    track: Optional[tuple] = None
    dt: float = 0.1
    budget: int = 10_000
    esjd_class: Optional[tuple] = None


@dataclass
class ChainDiagnostics:
    iterations: int
    accept_count: int
    d: int
    ell: float
    alpha: Fraction
    istar: int
    seed: object
    sq_jump_sum: np.ndarray
    batch_size: int
    batch_accepts: np.ndarray
    batch_sq_istar: np.ndarray
    batch_sq_class: np.ndarray
    track: tuple = ()
    thin: int = 1
    times: np.ndarray = field(default_factory=lambda: np.empty(0))
    trajectory: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    r_sums: np.ndarray = field(default_factory=lambda: np.empty(0))
    r_count: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accept_count / self.iterations

    def esjd(self, j: Optional[int] = None) -> float:
        """``(1/iterations) * sum_t (X_j(t+1) - X_j(t))^2``."""
        j = self.istar if j is None else j
        return float(self.sq_jump_sum[j] / self.iterations)

    @property
    def time_scale(self) -> float:
        return float(self.d) ** float(self.alpha)

    @property
    def esjd_rescaled(self) -> float:
        return self.time_scale * self.esjd()

    def class_esjd_rescaled(self) -> tuple[float, float]:
        """Rescaled ESJD averaged over the ESJD class, with its batch-means SE."""
        return _batch_mean(self.batch_sq_class, self._batch_lengths(), self.time_scale)

    def istar_esjd_rescaled(self) -> tuple[float, float]:
        return _batch_mean(self.batch_sq_istar, self._batch_lengths(), self.time_scale)

    @property
    def sum_r(self) -> float:
        return float(self.r_sums.sum() / self.r_count) if self.r_count else math.nan

    def _batch_lengths(self) -> np.ndarray:
        nb = self.batch_accepts.size
        lengths = np.full(nb, self.batch_size, dtype=float)
        lengths[-1] = self.iterations - self.batch_size * (nb - 1)
        return lengths

    def csv_row(self) -> dict:
        rate, se = acceptance_with_se(self)
        return {
            "ell": self.ell,
            "d": self.d,
            "alpha": str(self.alpha),
            "iterations": self.iterations,
            "accept_rate": rate,
            "accept_se": se,
            "esjd_istar": self.esjd(),
            "esjd_rescaled": self.esjd_rescaled,
            "sum_R": self.sum_r,
            "seed": _seed_label(self.seed),
        }

    def to_json(self) -> str:
        doc = {
            "iterations": self.iterations,
            "accept_count": self.accept_count,
            "d": self.d,
            "ell": self.ell,
            "alpha": str(self.alpha),
            "istar": self.istar,
            "seed": _seed_label(self.seed),
            "esjd": self.sq_jump_sum.tolist(),
            "batch_size": self.batch_size,
            "batch_accepts": self.batch_accepts.tolist(),
            "batch_sq_istar": self.batch_sq_istar.tolist(),
            "batch_sq_class": self.batch_sq_class.tolist(),
            "track": list(self.track),
            "thin": self.thin,
            "times": self.times.tolist(),
            "trajectory": self.trajectory.tolist(),
            "r_sums": self.r_sums.tolist(),
            "r_count": self.r_count,
        }
        doc["esjd"] = [s / self.iterations for s in doc["esjd"]]
        return json.dumps(doc)


def _seed_label(seed) -> str:
    if isinstance(seed, np.random.SeedSequence):
        return f"{seed.entropy}:{'/'.join(map(str, seed.spawn_key))}"
    return str(seed)


def _batch_mean(batch_sums: np.ndarray, lengths: np.ndarray, factor: float) -> tuple[float, float]:
    n = lengths.sum()
    mean = batch_sums.sum() / n
    nb = lengths.size
    if nb < 2:
        return float(factor * mean), math.nan
    per = batch_sums / lengths
    var = np.sum(lengths * (per - mean) ** 2) / (nb - 1)
    return float(factor * mean), float(factor * math.sqrt(var / n))


def acceptance_with_se(diag: ChainDiagnostics) -> tuple[float, float]:
    """Acceptance rate with a batch-means standard error over ``ceil(sqrt(n))`` batches."""
    if diag.iterations < 100:
        raise ValueError("batch-means error bars need at least 100 iterations")
    return _batch_mean(diag.batch_accepts.astype(float), diag._batch_lengths(), 1.0)


def _as_product(target) -> ProductTarget:
    if isinstance(target, GaussianTarget):
        return target.eigen_product()
    return target


def rwm_step(target, x, proposal: ProposalSpec, rng: np.random.Generator):
    """One Metropolis step: propose, then accept iff ``log U < log pi(y) - log pi(x)``.

    Returns ``(x_next, accepted, log_ratio)``.  Works on any target with a
    ``log_density`` method; the uniform is drawn after the proposal noise.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("current state has non-finite entries")
    d = getattr(target, "d", x.size)
    y = x + proposal.scales(d, x.size) * rng.standard_normal(x.size)
    u = rng.random()
    lx = target.log_density(x)
    if lx == -math.inf:
        return y, True, math.inf
    log_ratio = target.log_density(y) - lx
    if math.isnan(log_ratio):
        raise FloatingPointError("log acceptance ratio is NaN")
    accepted = math.log(u) < log_ratio if u > 0 else True
    return (y if accepted else x), accepted, log_ratio


def run_chain(
    target,
    proposal: ProposalSpec,
    iterations: int,
    istar: Optional[int] = None,
    record: RecordOptions = RecordOptions(),
    seed: SeedLike = 0,
    x0: Optional[np.ndarray] = None,
) -> ChainDiagnostics:
    """Run an RWM chain started in stationarity and collect diagnostics.

    Deterministic given ``seed``.  For a Gaussian target the chain runs on
    its eigen-coordinates and ``istar`` indexes an eigenvalue (ascending).
    """
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    prod = _as_product(target)
    istar = prod.istar if istar is None else int(istar)
    d, dim = prod.d, prod.dim
    rng = make_rng(seed)
    x = prod.sample(rng) if x0 is None else np.array(x0, dtype=float)
    s = proposal.scales(d, dim)
    if s.size == 1:
        s = np.full(dim, s[0])
    alpha_istar = (proposal.alpha[istar] if isinstance(proposal.alpha, tuple) else proposal.alpha)
    time_scale = float(d) ** float(alpha_istar)

    n_batches = math.ceil(math.sqrt(iterations))
    batch_size = math.ceil(iterations / n_batches)
    n_batches = math.ceil(iterations / batch_size)
    batch_acc = np.zeros(n_batches, dtype=np.int64)
    batch_sq_istar = np.zeros(n_batches)
    batch_sq_class = np.zeros(n_batches)
    sq_sum = np.zeros(dim)

    track = np.array(record.track if record.track is not None else (istar,), dtype=np.int64)
    esjd_class = np.array(record.esjd_class if record.esjd_class is not None else (istar,), dtype=np.int64)
    thin = max(1, math.ceil(time_scale * record.dt))
    if record.budget <= 0:
        thin = iterations + 1
    elif iterations // thin > record.budget:
        thin *= math.ceil(iterations / (thin * record.budget))
    cap = iterations // thin
    traj = np.empty((cap, track.size))
    n_groups = int(prod.labels.max()) + 1 if prod.labels.size else 0
    r_sums = np.zeros(max(n_groups, 1))
    r_scale = float(d) ** (-float(prod.alpha))

    code = prod.family.kernel_code
    block = max(1, min(iterations, 2**21 // dim))
    lfx = np.asarray(prod.log_terms(x), dtype=float).copy()
    accepted = 0
    n_rec = 0
    done = 0
    while done < iterations:
        n = min(block, iterations - done)
        z = rng.standard_normal((n, dim))
        u = rng.random(n)
        if code is not None:
            acc, n_rec, status = _kernels.product_block(
                code, x, lfx, prod.theta, s, z, u, done, batch_size, batch_acc, esjd_class,
                batch_sq_class, istar, batch_sq_istar, sq_sum, thin, track, traj, n_rec,
                prod.labels, r_scale, r_sums,
            )
            if status:
                raise FloatingPointError(f"non-finite log acceptance ratio near iteration {done}")
        else:
            acc, n_rec = _python_block(
                prod, x, lfx, s, z, u, done, batch_size, batch_acc, esjd_class, batch_sq_class,
                istar, batch_sq_istar, sq_sum, thin, track, traj, n_rec, r_scale, r_sums,
            )
        accepted += acc
        done += n

    times = (np.arange(1, n_rec + 1) * thin) / time_scale
    return ChainDiagnostics(
        iterations=iterations,
        accept_count=int(accepted),
        d=d,
        ell=float(proposal.ell),
        alpha=Fraction(alpha_istar),
        istar=istar,
        seed=seed,
        sq_jump_sum=sq_sum,
        batch_size=batch_size,
        batch_accepts=batch_acc,
        batch_sq_istar=batch_sq_istar,
        batch_sq_class=batch_sq_class,
        track=tuple(int(t) for t in track),
        thin=thin,
        times=times,
        trajectory=traj[:n_rec],
        r_sums=r_sums[:n_groups],
        r_count=n_rec,
    )


def _python_block(prod, x, lfx, s, z, u, step0, batch_size, batch_acc, esjd_class, batch_sq_class,
                  istar, batch_sq_istar, sq_sum, thin, track, traj, n_rec, r_scale, r_sums):
    accepted = 0
    for t in range(z.shape[0]):
        y = x + s * z[t]
        ly = prod.log_terms(y)
        lr = float(np.sum(ly - lfx))
        step = step0 + t
        b = step // batch_size
        if math.isnan(lr):
            raise FloatingPointError(f"non-finite log acceptance ratio at iteration {step}")
        if math.log(u[t]) < lr:
            accepted += 1
            batch_acc[b] += 1
            jump = y - x
            sq_sum += jump * jump
            batch_sq_istar[b] += jump[istar] ** 2
            batch_sq_class[b] += np.mean(jump[esjd_class] ** 2)
            x[:] = y
            lfx[:] = ly
        if (step + 1) % thin == 0 and n_rec < traj.shape[0]:
            traj[n_rec] = x[track]
            score = (prod.theta * prod.family.dlog_f(prod.theta * x)) ** 2 * r_scale
            mask = prod.labels >= 0
            mask[istar] = False
            np.add.at(r_sums, prod.labels[mask], score[mask])
            n_rec += 1
    return accepted, n_rec


@dataclass(frozen=True)
class REstimate:
    """Per-group means of the roughness statistic with standard errors."""

    d: int
    means: np.ndarray
    ses: np.ndarray
    total_mean: float
    total_se: float
    totals: np.ndarray


def empirical_r(target: ProductTarget, n_draws: int, rng: np.random.Generator,
                alpha: Optional[Fraction] = None) -> REstimate:
    """Monte Carlo estimate of ``R_i = d^-alpha sum_{j in group i, j != istar} (theta_j (log f)'(theta_j x_j))^2``.

    Each of the ``n_draws`` evaluations uses a fresh stationary draw.
    """
    if not isinstance(target, ProductTarget):
        raise TypeError("empirical_r needs a product target")
    alpha = target.alpha if alpha is None else alpha
    labels = target.labels.copy()
    labels[target.istar] = -1
    n_groups = int(target.labels.max()) + 1
    mask = labels >= 0
    scale = float(target.d) ** (-float(alpha))
    per = np.empty((n_draws, n_groups))
    for k in range(n_draws):
        v = target.family.sample(rng, target.dim)  # theta_j x_j ~ f
        score = (target.theta * target.family.dlog_f(v)) ** 2
        per[k] = np.bincount(labels[mask], weights=score[mask], minlength=n_groups) * scale
    totals = per.sum(axis=1)
    se = per.std(axis=0, ddof=1) / math.sqrt(n_draws) if n_draws > 1 else np.full(n_groups, math.nan)
    total_se = totals.std(ddof=1) / math.sqrt(n_draws) if n_draws > 1 else math.nan
    return REstimate(target.d, per.mean(axis=0), se, float(totals.mean()), float(total_se), totals)
