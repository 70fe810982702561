"""Hypothesis strategies for scaling vectors."""
from fractions import Fraction

from hypothesis import strategies as st

from rwmscale.asymptotics import FiniteTerm, FixedK, GroupMember, GroupSpec, OrderTerm, RandomK, ScalingVector

exponents = st.integers(-12, 12).map(lambda n: Fraction(n, 4))
card_exponents = st.integers(1, 12).map(lambda n: Fraction(n, 4))
constants = st.floats(0.1, 10.0, allow_nan=False)


@st.composite
def scaling_vectors(draw, max_terms=3, max_groups=3):
    terms = draw(st.lists(st.builds(OrderTerm, constants, exponents), max_size=max_terms))
    groups = draw(st.lists(
        st.builds(GroupSpec, st.builds(FixedK, constants), exponents, constants, card_exponents),
        min_size=1, max_size=max_groups,
    ))
    if terms and draw(st.booleans()):
        coi = FiniteTerm(draw(st.integers(0, len(terms) - 1)))
    else:
        coi = GroupMember(draw(st.integers(0, len(groups) - 1)))
    return ScalingVector(tuple(terms), tuple(groups), coi)


@st.composite
def random_constant_vectors(draw):
    """Vectors with RandomK groups: distinct gammas, no finite exponent equal to a gamma."""
    gammas = draw(st.lists(exponents, min_size=1, max_size=3, unique=True))
    groups = tuple(GroupSpec(RandomK(draw(constants)), g, draw(constants), draw(card_exponents)) for g in gammas)
    lams = draw(st.lists(exponents.filter(lambda e: e not in gammas), max_size=2))
    terms = tuple(OrderTerm(draw(constants), lam) for lam in lams)
    coi = GroupMember(draw(st.integers(0, len(groups) - 1)))
    return ScalingVector(terms, groups, coi)
