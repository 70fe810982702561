"""Target distributions: one-dimensional families, product targets, Gaussians.

Product targets have density ``prod_j theta_j f(theta_j x_j)``; Gaussian
targets carry an explicit covariance.  Because an isotropic random-walk
proposal commutes with rotations, every Gaussian target can also be run as
a product of normals in its eigenbasis (:meth:`GaussianTarget.eigen_product`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, linalg

from . import _kernels
from .asymptotics import (
    FixedK,
    GroupSpec,
    OrderTerm,
    RandomK,
    ScalingVector,
    compute_alpha,
    normalize_component,
)


class DivergentIntegral(ArithmeticError):
    pass


class SpectrumFitError(ValueError):
    pass


def expectation(fam: "DensityFamily", g: Callable, rel_tol: float = 1e-10, max_doublings: int = 12) -> float:
    """``E[g(X)]`` for ``X ~ fam`` by adaptive quadrature on a growing window.

    The window ``[-T, T]`` is doubled until the added tail mass is below
    ``rel_tol`` of the integral.  Continued growth over ``max_doublings``
    doublings is reported as divergence.
    """

    def integrand(x):
        return g(x) * math.exp(fam.log_f(x))

    def over(a, b):
        points = [0.0] if a < 0 < b else None
        return integrate.quad(integrand, a, b, points=points, limit=200, epsabs=0.0, epsrel=1e-12)[0]

    T = 8.0 * fam.scale
    total = over(-T, T)
    for _ in range(max_doublings):
        tail = over(-2 * T, -T) + over(T, 2 * T)
        total += tail
        T *= 2
        if abs(tail) <= rel_tol * abs(total):
            return total
    raise DivergentIntegral(f"E[g(X)] under {fam.name} did not settle by T={T:g}")


@dataclass
class DensityFamily:
    """A one-dimensional density ``f`` with its log-derivatives and a sampler.

    ``kernel_code`` selects the compiled implementation used by the fast
    sampler; families without one fall back to the numpy path.
    """

    name: str
    log_f: Callable
    dlog_f: Callable
    d2log_f: Callable
    sampler: Callable
    kernel_code: Optional[int] = None
    scale: float = 1.0

    def sample(self, rng: np.random.Generator, size=None):
        return self.sampler(rng, size)

    @cached_property
    def fisher(self) -> float:
        return fisher_term(self)

    @cached_property
    def fourth_moment(self) -> float:
        return expectation(self, lambda x: self.dlog_f(x) ** 4)

    @cached_property
    def second_curvature_moment(self) -> float:
        # f''/f = (log f)'' + ((log f)')^2
        return expectation(self, lambda x: (self.d2log_f(x) + self.dlog_f(x) ** 2) ** 2)

    def scaled(self, sigma: float) -> "DensityFamily":
        """Family of ``sigma * X``, i.e. ``f_sigma(x) = f(x / sigma) / sigma``."""
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        base = self
        return DensityFamily(
            name=f"{self.name}*{sigma:g}",
            log_f=lambda x: base.log_f(np.asarray(x) / sigma) - math.log(sigma),
            dlog_f=lambda x: base.dlog_f(np.asarray(x) / sigma) / sigma,
            d2log_f=lambda x: base.d2log_f(np.asarray(x) / sigma) / sigma**2,
            sampler=lambda rng, size=None: sigma * base.sampler(rng, size),
            scale=self.scale * sigma,
        )


_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def _logistic_log_f(x):
    a = np.abs(x)
    return -a - 2.0 * np.log1p(np.exp(-a))


NORMAL = DensityFamily(
    name="normal",
    log_f=lambda x: -0.5 * np.square(x) - _HALF_LOG_2PI,
    dlog_f=lambda x: -np.asarray(x, dtype=float),
    d2log_f=lambda x: -np.ones_like(np.asarray(x, dtype=float)),
    sampler=lambda rng, size=None: rng.standard_normal(size),
    kernel_code=_kernels.NORMAL,
)

LOGISTIC = DensityFamily(
    name="logistic",
    log_f=_logistic_log_f,
    dlog_f=lambda x: -np.tanh(0.5 * np.asarray(x, dtype=float)),
    d2log_f=lambda x: -0.5 / np.cosh(0.5 * np.asarray(x, dtype=float)) ** 2,
    sampler=lambda rng, size=None: rng.logistic(size=size),
    kernel_code=_kernels.LOGISTIC,
)

# Not C^2 at the origin; kept as a negative example for validate_family.
LAPLACE = DensityFamily(
    name="laplace",
    log_f=lambda x: -np.abs(x) - math.log(2.0),
    dlog_f=lambda x: -np.sign(x),
    d2log_f=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    sampler=lambda rng, size=None: rng.laplace(size=size),
    kernel_code=_kernels.LAPLACE,
)

FAMILIES = {fam.name: fam for fam in (NORMAL, LOGISTIC, LAPLACE)}


def get_family(name: str) -> DensityFamily:
    try:
        return FAMILIES[name]
    except KeyError:
        raise KeyError(f"unknown density family {name!r}; choose from {sorted(FAMILIES)}") from None


def fisher_term(fam: DensityFamily) -> float:
    """``E[(f'(X)/f(X))^2]`` by quadrature."""
    return expectation(fam, lambda x: fam.dlog_f(x) ** 2)


@dataclass
class FamilyReport:
    name: str
    fisher: float
    fourth_moment: float
    second_curvature_moment: float
    lipschitz_coarse: float
    lipschitz_fine: float
    issues: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.issues


def validate_family(fam: DensityFamily, half_width: float = 10.0, n_grid: int = 2001) -> FamilyReport:
    """Check the regularity assumptions numerically.

    The Lipschitz witness is the largest difference quotient of ``(log f)'``
    on a grid; if it grows markedly when the grid is refined tenfold, the
    derivative is flagged as non-Lipschitz (e.g. a jump).
    """
    issues = []

    def moment(fn):
        try:
            value = fn()
        except DivergentIntegral as exc:
            issues.append(str(exc))
            return math.inf
        if not math.isfinite(value):
            issues.append(f"non-finite moment for {fam.name}")
        return value

    fisher = moment(lambda: fam.fisher)
    fourth = moment(lambda: fam.fourth_moment)
    curv = moment(lambda: fam.second_curvature_moment)

    def witness(n):
        # offset keeps the origin off the grid
        x = np.linspace(-half_width, half_width, n) * fam.scale + 1e-3 * fam.scale / n
        g = np.asarray(fam.dlog_f(x), dtype=float)
        return float(np.max(np.abs(np.diff(g)) / np.diff(x)))

    coarse, fine = witness(n_grid), witness(10 * n_grid)
    if fine > 2.0 * coarse + 1e-12:
        issues.append(
            f"(log f)' of {fam.name} not Lipschitz: difference quotients grow from "
            f"{coarse:.3g} to {fine:.3g} under grid refinement"
        )
    return FamilyReport(fam.name, fisher, fourth, curv, coarse, fine, issues)


# -- targets -----------------------------------------------------------------


def _check_point(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise ValueError(f"expected a vector of length {dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("point has non-finite entries")
    return x


@dataclass(frozen=True, eq=False)
class ProductTarget:
    """``prod_j theta_j f(theta_j x_j)`` with nominal dimension ``d``.

    ``labels[j]`` is the replicated group of component ``j`` (-1 for finite
    terms) and ``alphas[j]`` the per-component exponent an inhomogeneous
    proposal would use.  ``istar`` is the component of interest.
    """

    theta: np.ndarray
    family: DensityFamily = NORMAL
    d: Optional[int] = None
    labels: Optional[np.ndarray] = None
    istar: int = 0
    alpha: Fraction = Fraction(1)
    alphas: Optional[tuple] = None

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 1 or not np.all(theta > 0) or not np.all(np.isfinite(theta)):
            raise ValueError("theta must be a vector of positive finite reals")
        object.__setattr__(self, "theta", theta)
        if self.d is None:
            object.__setattr__(self, "d", theta.size)
        labels = np.full(theta.size, -1, dtype=np.int64) if self.labels is None else np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if self.alphas is None:
            object.__setattr__(self, "alphas", (self.alpha,) * theta.size)

    @property
    def dim(self) -> int:
        return self.theta.size

    def log_density(self, x) -> float:
        x = _check_point(x, self.dim)
        return float(np.sum(np.log(self.theta) + self.family.log_f(self.theta * x)))

    def log_terms(self, x) -> np.ndarray:
        """Per-component ``log f(theta_j x_j)``; differences of these are the epsilon terms."""
        return np.asarray(self.family.log_f(self.theta * np.asarray(x, dtype=float)))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.family.sample(rng, self.dim) / self.theta

    def group_members(self, group: int) -> np.ndarray:
        return np.flatnonzero(self.labels == group)


@dataclass(frozen=True, eq=False)
class GaussianTarget:
    """Zero-mean Gaussian with covariance ``cov``; ``kind`` names the construction."""

    cov: np.ndarray
    kind: str = "general"

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
            raise ValueError("covariance must be a symmetric square matrix")
        object.__setattr__(self, "cov", cov)

    @classmethod
    def intraclass(cls, d: int, diag: float = 2.0, offdiag: float = 1.0) -> "GaussianTarget":
        cov = np.full((d, d), float(offdiag))
        np.fill_diagonal(cov, float(diag))
        return cls(cov, "intraclass")

    @classmethod
    def hierarchical(cls, d: int) -> "GaussianTarget":
        """``X_1 ~ N(0,1)``, ``X_j ~ N(X_1, 1)`` for ``j >= 2``."""
        cov = np.ones((d, d))
        np.fill_diagonal(cov, 2.0)
        cov[0, 0] = 1.0
        return cls(cov, "hierarchical")

    @classmethod
    def diagonal(cls, variances: Sequence[float]) -> "GaussianTarget":
        return cls(np.diag(np.asarray(variances, dtype=float)), "diagonal")

    @property
    def d(self) -> int:
        return self.cov.shape[0]

    dim = d

    @cached_property
    def cholesky(self) -> np.ndarray:
        try:
            return linalg.cholesky(self.cov, lower=True)
        except linalg.LinAlgError:
            raise ValueError(f"{self.kind} covariance is not positive definite at d={self.d}") from None

    @cached_property
    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues in ascending order and orthonormal eigenvectors."""
        w, v = np.linalg.eigh(self.cov)
        if w[0] <= 0:
            raise ValueError(f"{self.kind} covariance is not positive definite at d={self.d}")
        return w, v

    def log_density(self, x) -> float:
        x = _check_point(x, self.d)
        L = self.cholesky
        w = linalg.solve_triangular(L, x, lower=True)
        return float(-0.5 * w @ w - np.sum(np.log(np.diag(L))) - self.d * _HALF_LOG_2PI)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.cholesky @ rng.standard_normal(self.d)

    def eigen_product(self, reference: Optional[int] = None) -> ProductTarget:
        """The same target in eigen-coordinates, as a product of normals.

        With ``reference`` set, all variances are divided by that
        eigenvalue so the reference coordinate has unit scale.
        """
        w, _ = self.eigh
        scale = 1.0 if reference is None else w[reference]
        return ProductTarget(np.sqrt(scale / w), NORMAL, d=self.d, istar=reference or 0)

    def to_eigen(self, x) -> np.ndarray:
        return self.eigh[1].T @ np.asarray(x, dtype=float)


def log_density(t, x) -> float:
    return t.log_density(x)


def sample_stationary(t, rng: np.random.Generator) -> np.ndarray:
    """Exact draw from the target."""
    return t.sample(rng)


def draw_group_constants(n: int, b: float, rng: np.random.Generator) -> np.ndarray:
    """Random group constants with ``E[1/K] = b``: ``1/K ~ Gamma(4, b/4)``."""
    return 1.0 / rng.gamma(4.0, b / 4.0, size=n)


def product_from_scaling(
    sv: ScalingVector,
    d: int,
    family: DensityFamily = NORMAL,
    rng: Optional[np.random.Generator] = None,
) -> ProductTarget:
    """Instantiate a normalized scaling vector as a product target at dimension ``d``.

    Finite terms come first (in the vector's order), then each group with
    ``round(C * d**beta)`` members, less one for the group that supplied
    the component of interest.
    """
    norm = sv if sv.is_normalized else normalize_component(sv)
    alpha = compute_alpha(norm)
    variances, labels, alphas = [], [], []
    donated = {}
    for t in norm.finite_terms:
        variances.append(t.constant * float(d) ** (-float(t.exponent)))
        labels.append(-1)
        if t.member_of is not None:
            donated[t.member_of] = donated.get(t.member_of, 0) + 1
            alphas.append(norm.groups[t.member_of].order)
        else:
            alphas.append(alpha)
    for i, g in enumerate(norm.groups):
        count = g.cardinality(d) - donated.get(i, 0)
        if count < 1:
            raise ValueError(f"group {i} is empty at d={d}")
        if isinstance(g.constant_model, RandomK):
            if rng is None:
                raise ValueError("random group constants need an rng")
            consts = draw_group_constants(count, g.constant_model.b, rng)
        else:
            consts = np.full(count, g.constant_model.K)
        variances.extend(consts * float(d) ** (-float(g.gamma)))
        labels.extend([i] * count)
        alphas.extend([g.order] * count)
    theta = 1.0 / np.sqrt(np.asarray(variances))
    return ProductTarget(
        theta, family, d=d, labels=np.array(labels), istar=norm.component_of_interest.index,
        alpha=alpha, alphas=tuple(alphas),
    )


# -- spectrum classification ----------------------------------------------------


@dataclass(frozen=True)
class SpectrumFit:
    scaling_vector: ScalingVector
    rows: list  # (d, eigen_index, eigenvalue, fitted_exponent, cluster_id)
    exponents: np.ndarray
    clusters: np.ndarray
    bounded: dict


def _rational(x: float, denominator: int) -> Fraction:
    return Fraction(round(x * denominator), denominator)


def fit_spectrum(
    cov_builder: Callable[[int], np.ndarray],
    d_grid: Sequence[int],
    tol: float = 0.1,
    denominator: int = 4,
) -> SpectrumFit:
    """Infer growth exponents of a covariance spectrum across ``d_grid``.

    Eigenvalues near either end of the sorted spectrum are tracked by their
    rank from that end; interior ones by quantile.  Each tracked
    trajectory gets a log-log least-squares slope, slopes within ``tol``
    are clustered, and a cluster whose size grows between the two largest
    dimensions becomes a replicated group.
    """
    d_grid = sorted(int(d) for d in d_grid)
    if len(d_grid) < 4:
        raise ValueError("spectrum classification needs at least 4 dimensions")
    spectra = []
    for d in d_grid:
        cov = np.asarray(cov_builder(d), dtype=float)
        if not np.allclose(cov, cov.T):
            raise ValueError(f"covariance at d={d} is not symmetric")
        w = np.linalg.eigvalsh(cov)
        if w[0] <= 0:
            raise ValueError(f"covariance at d={d} is not positive definite")
        spectra.append(w)
    edge = max(1, d_grid[0] // 4)
    logd = np.log(np.array(d_grid, dtype=float))

    def trajectory(pos: int, size: int) -> np.ndarray:
        if pos < edge:
            idx = [pos] * len(d_grid)
        elif size - 1 - pos < edge:
            idx = [len(w) - (size - pos) for w in spectra]
        else:
            q = pos / (size - 1)
            idx = [int(round(q * (len(w) - 1))) for w in spectra]
        return np.array([w[i] for w, i in zip(spectra, idx)])

    def slope_of(traj: np.ndarray) -> float:
        steps = np.diff(traj) / np.abs(traj[:-1])
        if np.any(steps > 1e-9) and np.any(steps < -1e-9):
            raise SpectrumFitError("non-monotone eigenvalue trajectory; growth exponent is ill-defined")
        return float(np.polyfit(logd, np.log(traj), 1)[0])

    def exponents_at(k: int) -> np.ndarray:
        size = len(spectra[k])
        return np.array([slope_of(trajectory(p, size)) for p in range(size)])

    expo_last = exponents_at(len(d_grid) - 1)
    expo_prev = exponents_at(len(d_grid) - 2)

    order = np.argsort(expo_last, kind="stable")
    clusters = np.empty(len(expo_last), dtype=int)
    centers = []
    cid = -1
    prev = None
    for p in order:
        if prev is None or expo_last[p] - prev > tol:
            cid += 1
            centers.append([])
        clusters[p] = cid
        centers[cid].append(expo_last[p])
        prev = expo_last[p]
    centers = np.array([np.mean(c) for c in centers])

    def assign(expo):
        return np.argmin(np.abs(expo[:, None] - centers[None, :]), axis=1)

    counts_last = np.bincount(clusters, minlength=len(centers))
    counts_prev = np.bincount(assign(expo_prev), minlength=len(centers))
    bounded = {c: bool(counts_last[c] <= counts_prev[c]) for c in range(len(centers))}

    D, Dp = d_grid[-1], d_grid[-2]
    w_last = spectra[-1]
    finite, groups = [], []
    for c in range(len(centers)):
        members = np.flatnonzero(clusters == c)
        lam = -_rational(centers[c], denominator)
        if bounded[c]:
            for p in members:
                finite.append(OrderTerm(w_last[p] * D ** float(lam), lam))
        else:
            beta = math.log(counts_last[c] / counts_prev[c]) / math.log(D / Dp)
            beta_q = _rational(beta, denominator)
            if beta_q <= 0:
                beta_q = Fraction(1, denominator)
            coeff = counts_last[c] / D ** float(beta_q)
            K = float(np.median(w_last[members])) * D ** float(lam)
            groups.append(GroupSpec(FixedK(K), lam, coeff, beta_q))
    if not groups:
        raise SpectrumFitError("no eigenvalue cluster grows with d")
    rows = [(D, p, float(w_last[p]), float(expo_last[p]), int(clusters[p])) for p in range(len(w_last))]
    return SpectrumFit(ScalingVector(tuple(finite), tuple(groups)), rows, expo_last, clusters, bounded)


def classify_spectrum(cov_builder: Callable[[int], np.ndarray], d_grid: Sequence[int], **kw) -> ScalingVector:
    """Scaling vector inferred from the covariance spectra over ``d_grid``."""
    return fit_spectrum(cov_builder, d_grid, **kw).scaling_vector


def covariance_builder(kind: str, **params) -> Callable[[int], np.ndarray]:
    if kind == "intraclass":
        return lambda d: GaussianTarget.intraclass(d, params.get("diag", 2.0), params.get("offdiag", 1.0)).cov
    if kind == "hierarchical":
        return lambda d: GaussianTarget.hierarchical(d).cov
    if kind == "identity":
        return lambda d: np.eye(d)
    raise KeyError(f"no covariance builder for {kind!r}")
