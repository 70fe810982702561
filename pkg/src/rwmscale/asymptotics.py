"""Exact order-of-growth arithmetic on scaling vectors.

A scaling vector lists the variance-like scaling terms of a product target
as powers of the dimension ``d``.  Finite terms are ``K / d**lam`` (one
component each) and replicated groups are ``K / d**gamma`` repeated
``C * d**beta`` times.  Exponents are :class:`fractions.Fraction` so that
ties between orders, which decide whether the 0.234 regime applies, are
compared exactly.

Typical use::

    sv = ScalingVector(
        finite_terms=[OrderTerm(1, -1)],
        groups=[GroupSpec(FixedK(1), gamma=0)],
        component_of_interest=GroupMember(0),
    )
    analysis = analyze(sv)
    analysis.alpha, analysis.aoar
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Sequence, Union

from . import diffusion

Rational = Union[Fraction, int, str]


def as_fraction(value) -> Fraction:
    """Parse an exact exponent.  Floats are refused; use a string like ``"3/4"``."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool) or isinstance(value, float):
        raise TypeError(f"exponents must be exact (int, Fraction or 'p/q' string), got {value!r}")
    if isinstance(value, (int, str)):
        return Fraction(value)
    raise TypeError(f"cannot interpret {value!r} as an exact exponent")


def _positive(value, name: str) -> float:
    value = float(value)
    if not (value > 0 and math.isfinite(value)):
        raise ValueError(f"{name} must be positive and finite, got {value!r}")
    return value


@dataclass(frozen=True)
class OrderTerm:
    """A single scaling term ``constant / d**exponent``.

    ``member_of`` is set when the term is a member of a replicated group
    that was pulled out to serve as the component of interest.
    """

    constant: float
    exponent: Fraction
    member_of: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "constant", _positive(self.constant, "term constant"))
        object.__setattr__(self, "exponent", as_fraction(self.exponent))


@dataclass(frozen=True)
class FixedK:
    K: float

    def __post_init__(self):
        object.__setattr__(self, "K", _positive(self.K, "K"))

    @property
    def inverse(self) -> float:
        return 1.0 / self.K


@dataclass(frozen=True)
class RandomK:
    """Group constants drawn i.i.d. with ``E[1/K] = b``."""

    b: float

    def __post_init__(self):
        object.__setattr__(self, "b", _positive(self.b, "b"))

    @property
    def inverse(self) -> float:
        return self.b


@dataclass(frozen=True)
class GroupSpec:
    """``C * d**beta`` components sharing the scaling order ``K / d**gamma``."""

    constant_model: Union[FixedK, RandomK]
    gamma: Fraction
    card_coeff: float = 1.0
    card_exponent: Fraction = Fraction(1)

    def __post_init__(self):
        object.__setattr__(self, "gamma", as_fraction(self.gamma))
        object.__setattr__(self, "card_exponent", as_fraction(self.card_exponent))
        object.__setattr__(self, "card_coeff", _positive(self.card_coeff, "card_coeff"))
        if self.card_exponent <= 0:
            raise ValueError("group cardinality must grow with d (card_exponent > 0)")
        if not isinstance(self.constant_model, (FixedK, RandomK)):
            raise TypeError("constant_model must be FixedK or RandomK")

    @property
    def order(self) -> Fraction:
        """Exponent of ``c(J(i,d)) * d**gamma``, i.e. this group's own alpha."""
        return self.gamma + self.card_exponent

    def cardinality(self, d: int) -> int:
        return max(1, int(round(self.card_coeff * d ** float(self.card_exponent))))


@dataclass(frozen=True)
class FiniteTerm:
    index: int


@dataclass(frozen=True)
class GroupMember:
    group: int


ComponentRef = Union[FiniteTerm, GroupMember]


@dataclass(frozen=True)
class ScalingVector:
    """Symbolic scaling vector; finite terms are kept in descending exponent order."""

    finite_terms: tuple = ()
    groups: tuple = ()
    component_of_interest: Optional[ComponentRef] = None

    def __post_init__(self):
        terms = tuple(self.finite_terms)
        groups = tuple(self.groups)
        if not groups:
            raise ValueError("a scaling vector needs at least one replicated group")
        coi = self.component_of_interest
        order = sorted(range(len(terms)), key=lambda j: -terms[j].exponent)
        if isinstance(coi, FiniteTerm):
            if not 0 <= coi.index < len(terms):
                raise IndexError(f"finite term {coi.index} out of range")
            coi = FiniteTerm(order.index(coi.index))
        elif isinstance(coi, GroupMember):
            if not 0 <= coi.group < len(groups):
                raise IndexError(f"group {coi.group} out of range")
        elif coi is not None:
            raise TypeError("component_of_interest must be FiniteTerm, GroupMember or None")
        object.__setattr__(self, "finite_terms", tuple(terms[j] for j in order))
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "component_of_interest", coi)
        if any(isinstance(g.constant_model, RandomK) for g in groups):
            self.check_distinct_orders()

    @property
    def random_constants(self) -> bool:
        return any(isinstance(g.constant_model, RandomK) for g in self.groups)

    def check_distinct_orders(self) -> None:
        """Enforce the random-constant assumptions: distinct gammas, no lambda equal to a gamma."""
        gammas = [g.gamma for g in self.groups]
        if len(set(gammas)) != len(gammas):
            raise ValueError("groups must have pairwise distinct gamma with random constants")
        clash = {t.exponent for t in self.finite_terms if t.member_of is None} & set(gammas)
        if clash:
            raise ValueError(f"finite exponents {sorted(clash)} coincide with a group gamma")

    def shifted(self, c: Rational) -> "ScalingVector":
        """Multiply every scaling term by ``d**c`` (subtract ``c`` from every exponent)."""
        c = as_fraction(c)
        return replace(
            self,
            finite_terms=tuple(replace(t, exponent=t.exponent - c) for t in self.finite_terms),
            groups=tuple(replace(g, gamma=g.gamma - c) for g in self.groups),
        )

    @property
    def is_normalized(self) -> bool:
        coi = self.component_of_interest
        if not isinstance(coi, FiniteTerm):
            return False
        term = self.finite_terms[coi.index]
        return term.exponent == 0 and term.constant == 1.0


class Mode(enum.Enum):
    HOMOGENEOUS = "homogeneous"
    INHOMOGENEOUS = "inhomogeneous"


@dataclass(frozen=True)
class Condition5:
    """Verdict on whether no finite term dominates the aggregate.

    ``numerator_exponent`` is the largest finite exponent (``None`` when
    there are no finite terms) and ``denominator_exponent`` the largest of
    the group orders ``gamma + beta``.
    """

    holds: bool
    numerator_exponent: Optional[Fraction]
    denominator_exponent: Fraction

    @property
    def label(self) -> str:
        return "holds" if self.holds else "violated"


class ConditionViolated(ValueError):
    """The 0.234 analysis does not apply: some finite term dominates (AOAR is below 0.234)."""


def normalize_component(sv: ScalingVector) -> ScalingVector:
    """Rescale ``sv`` so the component of interest has scaling term exactly 1.

    A group member chosen as the component of interest is pulled out into
    the finite part as ``OrderTerm(1, 0, member_of=i)``.  For groups with
    random constants only the exponents are shifted, since the chosen
    member's own constant stays free.
    """
    coi = sv.component_of_interest
    if coi is None:
        raise ValueError("component_of_interest is not set")
    if isinstance(coi, FiniteTerm):
        ref = sv.finite_terms[coi.index]
        shift, scale = ref.exponent, ref.constant
    else:
        group = sv.groups[coi.group]
        shift = group.gamma
        scale = group.constant_model.K if isinstance(group.constant_model, FixedK) else 1.0

    def rescale_model(model):
        if isinstance(model, FixedK):
            return FixedK(model.K / scale)
        return RandomK(model.b * scale)

    terms = [OrderTerm(t.constant / scale, t.exponent - shift, t.member_of) for t in sv.finite_terms]
    groups = tuple(replace(g, constant_model=rescale_model(g.constant_model), gamma=g.gamma - shift)
                   for g in sv.groups)
    if isinstance(coi, FiniteTerm):
        terms[coi.index] = OrderTerm(1.0, Fraction(0), sv.finite_terms[coi.index].member_of)
        index = coi.index
    else:
        terms.append(OrderTerm(1.0, Fraction(0), member_of=coi.group))
        index = len(terms) - 1
    # ScalingVector re-sorts the terms and remaps the index
    return ScalingVector(tuple(terms), groups, FiniteTerm(index))


def compute_alpha(sv: ScalingVector) -> Fraction:
    """Smallest exponent keeping every order ratio finite: ``max(lam_1, max_i(gamma_i + beta_i))``."""
    orders = [g.order for g in sv.groups]
    if sv.finite_terms:
        orders.append(sv.finite_terms[0].exponent)
    return max(orders)


def group_alphas(sv: ScalingVector) -> list[Fraction]:
    """Per-group proposal exponents for inhomogeneous scaling."""
    return [g.order for g in sv.groups]


def dominating_groups(sv: ScalingVector) -> frozenset:
    alpha = compute_alpha(sv)
    return frozenset(i for i, g in enumerate(sv.groups) if g.order == alpha)


def check_condition5(sv: ScalingVector) -> Condition5:
    """Holds iff there are no finite terms or ``lam_1 < max_i(gamma_i + beta_i)`` (strict)."""
    top = max(g.order for g in sv.groups)
    if not sv.finite_terms:
        return Condition5(True, None, top)
    lam1 = sv.finite_terms[0].exponent
    return Condition5(lam1 < top, lam1, top)


def compute_er(sv: ScalingVector, fisher: float, mode: Mode = Mode.HOMOGENEOUS) -> float:
    """Aggregate roughness ``E_R`` for a (normalized) scaling vector.

    Homogeneous scaling keeps only groups whose order equals alpha;
    inhomogeneous scaling gives every group its own exponent so all of them
    contribute ``C_i * E[1/K] * fisher``.
    """
    if not (fisher > 0 and math.isfinite(fisher)):
        raise ValueError(f"fisher information must be positive and finite, got {fisher!r}")
    mode = Mode(mode)
    if mode is Mode.HOMOGENEOUS:
        chosen = dominating_groups(sv)
    else:
        chosen = range(len(sv.groups))
    return sum(sv.groups[i].card_coeff * sv.groups[i].constant_model.inverse * fisher for i in chosen)


def optimal_ell(e_r: float) -> tuple[float, float]:
    """``(ell_hat, aoar)`` for aggregate roughness ``e_r``.

    Raises :class:`ConditionViolated` when ``e_r`` is not positive, which
    is what a violated condition produces upstream.
    """
    if not e_r > 0:
        raise ConditionViolated(
            "E_R is not positive: no group dominates, the AOAR is below 0.234 "
            "(see the violated-condition verdict)"
        )
    u = diffusion.optimal_u()
    aoar = float(2.0 * diffusion.norm_cdf(-u / 2.0))
    if abs(aoar - diffusion.REFERENCE_AOAR) > 0.001:
        raise ArithmeticError(f"computed AOAR {aoar:.6f} disagrees with {diffusion.REFERENCE_AOAR}")
    return u / math.sqrt(e_r), aoar


def mixing_order(sv: ScalingVector) -> Fraction:
    """Exponent ``a`` such that the component of interest mixes in ``O(d**a)`` iterations."""
    return compute_alpha(normalize_component(sv))


@dataclass(frozen=True)
class ScalingAnalysis:
    normalized: ScalingVector
    alpha: Fraction
    alpha_per_group: tuple
    condition5: Condition5
    dominating_groups: frozenset
    e_r_homogeneous: float
    e_r_inhomogeneous: float
    ell_hat: Optional[float]
    ell_hat_inhomogeneous: Optional[float]
    aoar: Optional[float]
    mixing_order_exponent: Fraction
    fisher: float = 1.0

    def e_r(self, mode: Mode = Mode.HOMOGENEOUS) -> float:
        return self.e_r_homogeneous if Mode(mode) is Mode.HOMOGENEOUS else self.e_r_inhomogeneous

    def ell_for(self, mode: Mode = Mode.HOMOGENEOUS) -> Optional[float]:
        return self.ell_hat if Mode(mode) is Mode.HOMOGENEOUS else self.ell_hat_inhomogeneous


def analyze(sv: ScalingVector, fisher: float = 1.0) -> ScalingAnalysis:
    """Run the full analysis for the component of interest of ``sv``.

    ``ell_hat`` and ``aoar`` are ``None`` when the condition is violated.
    """
    norm = normalize_component(sv)
    alpha = compute_alpha(norm)
    cond = check_condition5(norm)
    er_h = compute_er(norm, fisher, Mode.HOMOGENEOUS)
    er_i = compute_er(norm, fisher, Mode.INHOMOGENEOUS)
    ell_h = ell_i = aoar = None
    if cond.holds:
        ell_h, aoar = optimal_ell(er_h)
        ell_i, _ = optimal_ell(er_i)
    return ScalingAnalysis(
        normalized=norm,
        alpha=alpha,
        alpha_per_group=tuple(group_alphas(norm)),
        condition5=cond,
        dominating_groups=dominating_groups(norm),
        e_r_homogeneous=er_h,
        e_r_inhomogeneous=er_i,
        ell_hat=ell_h,
        ell_hat_inhomogeneous=ell_i,
        aoar=aoar,
        mixing_order_exponent=alpha,
        fisher=fisher,
    )


# -- numeric oracle ---------------------------------------------------------

LIMIT_ZERO, LIMIT_FINITE, LIMIT_INFINITE = "0", "finite", "inf"


@dataclass(frozen=True)
class BruteForceLimits:
    """Numeric classification of the order ratios, from log-log slopes."""

    alpha_estimate: float
    condition5_limit: str
    group_limits: tuple
    slopes: dict = field(default_factory=dict)

    @property
    def condition5_holds(self) -> bool:
        return self.condition5_limit == LIMIT_ZERO

    @property
    def dominating_groups(self) -> frozenset:
        return frozenset(i for i, lim in enumerate(self.group_limits) if lim == LIMIT_FINITE)


def _logsumexp(values: Sequence[float]) -> float:
    top = max(values)
    if top == -math.inf:
        return top
    return top + math.log(sum(math.exp(v - top) for v in values))


def _classify(slope: float, tol: float) -> str:
    if slope < -tol:
        return LIMIT_ZERO
    if slope > tol:
        return LIMIT_INFINITE
    return LIMIT_FINITE


def brute_force_limits(sv: ScalingVector, d_grid: Sequence[int], tol: float = 1e-3) -> BruteForceLimits:
    """Evaluate the scaling ratios numerically on ``d_grid`` and classify their limits.

    Everything is done with logarithms, so astronomically large ``d`` (for
    instance ``10**200``) is fine and makes lower-order constants
    negligible.  Slopes are taken between the last two grid points.
    """
    d_grid = list(d_grid)
    if len(d_grid) < 3 or any(b <= a for a, b in zip(d_grid, d_grid[1:])):
        raise ValueError("d_grid must be increasing with at least 3 points")
    logd = [math.log(d) for d in d_grid]

    def log_inv_term(const, expo, logd_):
        # log of theta^2 = d**expo / K
        return float(expo) * logd_ - math.log(const)

    def log_group(g, logd_):
        card = math.log(g.card_coeff) + float(g.card_exponent) * logd_
        return card + float(g.gamma) * logd_ + math.log(g.constant_model.inverse)

    def slope(series):
        return (series[-1] - series[-2]) / (logd[-1] - logd[-2])

    # alpha: largest growth rate among numerator candidates
    rates = [slope([log_group(g, ld) for ld in logd]) for g in sv.groups]
    if sv.finite_terms:
        t = sv.finite_terms[0]
        rates.append(slope([log_inv_term(t.constant, t.exponent, ld) for ld in logd]))
    alpha_est = max(rates)

    if sv.finite_terms:
        t1 = sv.finite_terms[0]
        ratio = []
        for ld in logd:
            num = log_inv_term(t1.constant, t1.exponent, ld)
            den = _logsumexp([log_inv_term(t.constant, t.exponent, ld) for t in sv.finite_terms]
                             + [log_group(g, ld) for g in sv.groups])
            ratio.append(num - den)
        s5 = slope(ratio)
        cond_limit = _classify(s5, tol)
    else:
        s5 = -math.inf
        cond_limit = LIMIT_ZERO

    group_limits = tuple(
        _classify(slope([log_group(g, ld) - alpha_est * ld for ld in logd]), tol) for g in sv.groups
    )
    return BruteForceLimits(alpha_est, cond_limit, group_limits, {"condition5": s5})


def random_scaling_vector(rng, max_terms: int = 3, max_groups: int = 3, denominator: int = 4) -> ScalingVector:
    """Random fixed-constant scaling vector with exponents on a ``1/denominator`` lattice.

    Used by the self-test and the property tests to exercise the analyzer
    against :func:`brute_force_limits`.
    """
    import numpy as np

    def expo(lo, hi):
        return Fraction(int(rng.integers(lo * denominator, hi * denominator + 1)), denominator)

    def const():
        return float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))

    terms = tuple(OrderTerm(const(), expo(-3, 3)) for _ in range(int(rng.integers(0, max_terms + 1))))
    groups = tuple(
        GroupSpec(FixedK(const()), expo(-3, 3), const(), Fraction(int(rng.integers(1, 3 * denominator + 1)), denominator))
        for _ in range(int(rng.integers(1, max_groups + 1)))
    )
    if terms and rng.random() < 0.5:
        coi = FiniteTerm(int(rng.integers(0, len(terms))))
    else:
        coi = GroupMember(int(rng.integers(0, len(groups))))
    return ScalingVector(terms, groups, coi)


def oracle_agrees(sv: ScalingVector, d_grid=(10**100, 10**200, 10**400)) -> tuple[bool, str]:
    """Compare the exact analysis of ``sv`` with the numeric limits at huge ``d``."""
    norm = normalize_component(sv)
    exact = analyze(sv)
    numeric = brute_force_limits(norm, d_grid)
    problems = []
    if abs(numeric.alpha_estimate - float(exact.alpha)) > 1e-3:
        problems.append(f"alpha {exact.alpha} vs {numeric.alpha_estimate:.6f}")
    if numeric.condition5_holds != exact.condition5.holds:
        problems.append(f"condition {exact.condition5.label} vs limit {numeric.condition5_limit}")
    if numeric.dominating_groups != exact.dominating_groups:
        problems.append(f"dominating {sorted(exact.dominating_groups)} vs {sorted(numeric.dominating_groups)}")
    return not problems, "; ".join(problems)
