"""Experiment configuration files (YAML or JSON) and the analysis report schema.

Exponents are written as exact fractions, e.g. ``lambda: "3/4"``; floats
are rejected so that order comparisons stay exact.
"""
from __future__ import annotations

from fractions import Fraction
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import yaml
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    WithJsonSchema,
    model_validator,
)

from . import asymptotics as asy
from .experiments import ExperimentPlan, log_grid

SCHEMA_VERSION = 1


def _parse_exponent(value):
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool) or isinstance(value, float):
        raise ValueError(f"exponent {value!r} must be an exact fraction such as \"3/4\", not a float")
    if isinstance(value, (int, str)):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError):
            raise ValueError(f"cannot parse exponent {value!r} as a fraction") from None
    raise ValueError(f"cannot parse exponent {value!r}")


Exponent = Annotated[
    Fraction,
    BeforeValidator(_parse_exponent),
    PlainSerializer(str, return_type=str),
    WithJsonSchema({"type": "string", "pattern": r"^-?\d+(/\d+)?$"}),
]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True, arbitrary_types_allowed=True)


class TermConfig(_Strict):
    K: PositiveFloat = 1.0
    lam: Exponent = Field(alias="lambda")


class GroupConfig(_Strict):
    K: Optional[PositiveFloat] = None
    b: Optional[PositiveFloat] = None
    gamma: Exponent
    card_coeff: PositiveFloat = 1.0
    card_exponent: Exponent = Fraction(1)

    @model_validator(mode="after")
    def _one_constant(self):
        if (self.K is None) == (self.b is None):
            if self.K is None:
                self.K = 1.0
            else:
                raise ValueError("give either K (fixed constant) or b (random constants), not both")
        if self.card_exponent <= 0:
            raise ValueError("card_exponent must be positive")
        return self


class ScalingConfig(_Strict):
    finite_terms: list[TermConfig] = []
    groups: list[GroupConfig] = Field(min_length=1)


class GaussianConfig(_Strict):
    kind: Literal["intraclass", "hierarchical", "identity"]
    diag: PositiveFloat = 2.0
    offdiag: float = 1.0


class TargetConfig(_Strict):
    family: Literal["normal", "logistic", "laplace"] = "normal"
    gaussian: Optional[GaussianConfig] = None


class SpectrumConfig(_Strict):
    d_grid: list[PositiveInt] = Field(default=[50, 100, 200, 400], min_length=4)


class FiniteRef(_Strict):
    finite: int = Field(ge=0)


class GroupRef(_Strict):
    group: int = Field(ge=0)


class ProposalConfig(_Strict):
    mode: Literal["homogeneous", "inhomogeneous"] = "homogeneous"


class GridConfig(_Strict):
    min: PositiveFloat
    max: PositiveFloat
    n: int = Field(default=13, ge=3)


class ExperimentConfig(_Strict):
    ell_grid: Union[list[PositiveFloat], GridConfig] = GridConfig(min=0.5, max=5.0, n=13)
    d_list: list[PositiveInt] = Field(default=[100], min_length=1)
    iterations: PositiveInt = 100_000
    replicates: PositiveInt = 2
    ell: Optional[float] = Field(default=None, ge=0)
    dt: PositiveFloat = 0.1
    horizon: PositiveFloat = 2000.0
    n_draws: PositiveInt = 200
    bootstrap: int = Field(default=400, ge=0)


class Config(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    target: TargetConfig = TargetConfig()
    scaling_vector: Optional[ScalingConfig] = None
    spectrum: Optional[SpectrumConfig] = None
    component_of_interest: Union[FiniteRef, GroupRef, Literal["bulk", "largest", "smallest"]] = "bulk"
    proposal: ProposalConfig = ProposalConfig()
    experiment: ExperimentConfig = ExperimentConfig()
    seed: int = Field(default=0, ge=0)
    threads: PositiveInt = 1
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _consistent(self):
        if self.scaling_vector is None and self.target.gaussian is None:
            raise ValueError("need scaling_vector, or a gaussian target (optionally with spectrum)")
        if self.target.gaussian is None and isinstance(self.component_of_interest, str):
            if self.component_of_interest != "bulk":
                raise ValueError("named component selectors apply to gaussian targets only")
        if self.target.gaussian is not None and not isinstance(self.component_of_interest, str):
            raise ValueError("gaussian targets select the component with bulk/largest/smallest")
        return self

    # -- conversions --------------------------------------------------------

    def coi(self):
        ref = self.component_of_interest
        if isinstance(ref, FiniteRef):
            return asy.FiniteTerm(ref.finite)
        if isinstance(ref, GroupRef):
            return asy.GroupMember(ref.group)
        return asy.GroupMember(0) if self.target.gaussian is None else None

    def scaling_vector_obj(self) -> Optional[asy.ScalingVector]:
        if self.scaling_vector is None:
            return None
        terms = tuple(asy.OrderTerm(t.K, t.lam) for t in self.scaling_vector.finite_terms)
        groups = tuple(
            asy.GroupSpec(asy.FixedK(g.K) if g.b is None else asy.RandomK(g.b), g.gamma,
                          g.card_coeff, g.card_exponent)
            for g in self.scaling_vector.groups
        )
        return asy.ScalingVector(terms, groups, self.coi())

    def plan(self) -> ExperimentPlan:
        exp = self.experiment
        grid = exp.ell_grid
        ells = tuple(grid) if isinstance(grid, list) else log_grid(grid.min, grid.max, grid.n)
        gaussian = None
        if self.target.gaussian is not None:
            gaussian = self.target.gaussian.model_dump()
        spectrum_grid = tuple(self.spectrum.d_grid) if self.spectrum else (50, 100, 200, 400)
        return ExperimentPlan(
            family=self.target.family,
            scaling_vector=self.scaling_vector_obj(),
            gaussian=gaussian,
            spectrum_grid=spectrum_grid,
            istar=self.component_of_interest if isinstance(self.component_of_interest, str) else "bulk",
            mode=asy.Mode(self.proposal.mode),
            ell_grid=ells,
            d_list=tuple(exp.d_list),
            iterations=exp.iterations,
            replicates=exp.replicates,
            seed=self.seed,
            threads=self.threads,
            dt=exp.dt,
            n_draws=exp.n_draws,
            bootstrap=exp.bootstrap,
        )


class ConfigError(ValueError):
    pass


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        where = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"  {where}: {e['msg']}")
    return "\n".join(lines)


def load_config(source: Union[str, Path, dict], overrides: Optional[dict] = None) -> Config:
    """Parse and validate a config file (or a dict); manifests are accepted too."""
    if isinstance(source, dict):
        doc = source
        origin = "<dict>"
    else:
        path = Path(source)
        origin = str(path)
        try:
            doc = yaml.safe_load(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"{origin}: no such file") from None
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" line {mark.line + 1}, column {mark.column + 1}" if mark else ""
            raise ConfigError(f"{origin}:{where} {getattr(exc, 'problem', exc)}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{origin}: top level must be a mapping")
    if "manifest_version" in doc:
        doc = doc["config"]
    doc = dict(doc)
    for key, value in (overrides or {}).items():
        if value is not None:
            doc[key] = value
    try:
        return Config.model_validate(doc)
    except ValidationError as err:
        raise ConfigError(f"{origin}: invalid configuration\n{_format_errors(err)}") from None


# -- analysis report -------------------------------------------------------------


class Condition5Report(_Strict):
    verdict: Literal["holds", "violated"]
    numerator_exponent: Optional[Exponent]
    denominator_exponent: Exponent


class AnalysisReport(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    normalized: ScalingConfig
    component_of_interest: FiniteRef
    alpha: Exponent
    alpha_per_group: list[Exponent]
    condition5: Condition5Report
    dominating_groups: list[int]
    fisher: float
    e_r_homogeneous: float
    e_r_inhomogeneous: float
    ell_hat: Optional[float]
    ell_hat_inhomogeneous: Optional[float]
    aoar: Optional[float]
    mixing_order_exponent: Exponent

    @classmethod
    def from_analysis(cls, a: asy.ScalingAnalysis) -> "AnalysisReport":
        norm = a.normalized
        terms = [TermConfig(K=t.constant, lam=t.exponent) for t in norm.finite_terms]
        groups = []
        for g in norm.groups:
            model = g.constant_model
            groups.append(GroupConfig(
                K=model.K if isinstance(model, asy.FixedK) else None,
                b=model.b if isinstance(model, asy.RandomK) else None,
                gamma=g.gamma, card_coeff=g.card_coeff, card_exponent=g.card_exponent,
            ))
        return cls(
            normalized=ScalingConfig(finite_terms=terms, groups=groups),
            component_of_interest=FiniteRef(finite=norm.component_of_interest.index),
            alpha=a.alpha,
            alpha_per_group=list(a.alpha_per_group),
            condition5=Condition5Report(
                verdict=a.condition5.label,
                numerator_exponent=a.condition5.numerator_exponent,
                denominator_exponent=a.condition5.denominator_exponent,
            ),
            dominating_groups=sorted(a.dominating_groups),
            fisher=a.fisher,
            e_r_homogeneous=a.e_r_homogeneous,
            e_r_inhomogeneous=a.e_r_inhomogeneous,
            ell_hat=a.ell_hat,
            ell_hat_inhomogeneous=a.ell_hat_inhomogeneous,
            aoar=a.aoar,
            mixing_order_exponent=a.mixing_order_exponent,
        )
