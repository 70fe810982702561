"""Optimal scaling of random-walk Metropolis on targets with dimension-dependent scales.

The package splits into an exact analyzer of scaling vectors
(:mod:`rwmscale.asymptotics`), target constructors (:mod:`rwmscale.target`),
a compiled RWM sampler (:mod:`rwmscale.sampler`), the limiting diffusion
(:mod:`rwmscale.diffusion`) and reproducible studies
(:mod:`rwmscale.experiments`).  ``rwmscale`` on the command line wraps them.
"""
from .asymptotics import (
    ConditionViolated,
    FiniteTerm,
    FixedK,
    GroupMember,
    GroupSpec,
    Mode,
    OrderTerm,
    RandomK,
    ScalingVector,
    analyze,
    brute_force_limits,
)
from .diffusion import limiting_acceptance, maximize_speed, speed
from .sampler import ProposalSpec, RecordOptions, run_chain
from .target import GaussianTarget, ProductTarget, get_family

__all__ = [
    "ConditionViolated", "FiniteTerm", "FixedK", "GroupMember", "GroupSpec", "Mode", "OrderTerm",
    "RandomK", "ScalingVector", "analyze", "brute_force_limits", "limiting_acceptance",
    "maximize_speed", "speed", "ProposalSpec", "RecordOptions", "run_chain", "GaussianTarget",
    "ProductTarget", "get_family",
]
