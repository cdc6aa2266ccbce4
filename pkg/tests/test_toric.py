import itertools
from fractions import Fraction
from math import factorial

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import polygon_volume
from zcrit.charge import dhym_charge, k_stability_charge
from zcrit.toric import (
    DelzantPolytope,
    Fan,
    FanError,
    NonDelzantError,
    ToricDivisor,
    box,
    build_intersection_table,
    canonical_divisor,
    intersection_number,
    interval,
    polytope_to_fan,
    principal_divisor,
    simplex,
)


def hirzebruch(a: int, b, c) -> DelzantPolytope:
    """{x >= 0, y >= 0, y <= b, x + a y <= c}, Delzant for integer a >= 0 and c > a b."""
    return DelzantPolytope(((1, 0), (0, 1), (0, -1), (-1, -a)), (Fraction(0), Fraction(0), -Fraction(b), -Fraction(c)))


def test_interval_is_p1():
    fan, L = polytope_to_fan(interval())
    assert sorted(fan.rays) == [(-1,), (1,)]
    assert intersection_number(fan, [L]) == 1
    assert intersection_number(fan, [canonical_divisor(fan)]) == -2


def test_simplex_is_p2():
    fan, L = polytope_to_fan(simplex(2))
    assert set(fan.rays) == {(1, 0), (0, 1), (-1, -1)}
    assert intersection_number(fan, [L, L]) == 1
    K = canonical_divisor(fan)
    assert intersection_number(fan, [-K, -K]) == 9


def test_square_is_p1xp1():
    fan, L = polytope_to_fan(box(1, 1))
    assert intersection_number(fan, [L, L]) == 2
    assert intersection_number(fan, [-canonical_divisor(fan), L]) == 4


def test_zero_divisor_kills_products():
    fan, L = polytope_to_fan(simplex(3))
    zero = ToricDivisor.zero(len(fan.rays))
    assert intersection_number(fan, [L, zero, L]) == 0


def test_tables():
    fan, L = polytope_to_fan(interval())
    table = build_intersection_table(fan, L, k_stability_charge(1))
    assert table.entries == {(1, 0, 0): 1, (0, 1, 0): -2}
    fan, L = polytope_to_fan(simplex(2))
    table = build_intersection_table(fan, L, dhym_charge(2))
    assert table.entries == {(2, 0, 0): 1, (1, 1, 0): -3, (0, 2, 0): 9}
    assert table.get(0, 1, 1) == 0


def test_non_delzant_vertex_is_named():
    # the cone at the origin of {x >= 0, y >= 0, x + 2y <= 2, ...} after a shear is singular
    P = DelzantPolytope(((1, 0), (1, 2), (-1, 0), (0, -1)), (Fraction(0), Fraction(0), -Fraction(3), -Fraction(3)))
    with pytest.raises(NonDelzantError, match="vertex"):
        polytope_to_fan(P)


def test_incomplete_fan_rejected():
    fan = Fan(((1, 0), (0, 1)), ((0, 1),))
    with pytest.raises(FanError):
        fan.check()


small = st.integers(min_value=1, max_value=6)


@settings(max_examples=40, deadline=None)
@given(a=st.integers(min_value=0, max_value=3), b=small, extra=small)
def test_volume_matches_polygon_oracle(a, b, extra):
    P = hirzebruch(a, b, a * b + extra)
    fan, L = polytope_to_fan(P)
    verts = P.irredundant().vertices().keys()
    assert intersection_number(fan, [L, L]) == 2 * polygon_volume(verts)


@settings(max_examples=25, deadline=None)
@given(sides=st.lists(small, min_size=3, max_size=3))
def test_box_volume_in_three_dimensions(sides):
    fan, L = polytope_to_fan(box(*sides))
    assert intersection_number(fan, [L, L, L]) == factorial(3) * sides[0] * sides[1] * sides[2]


def _random_divisor(draw, nrays):
    coeffs = draw(st.lists(st.fractions(min_value=-5, max_value=5, max_denominator=4), min_size=nrays, max_size=nrays))
    return ToricDivisor(tuple(coeffs))


fans = st.sampled_from([
    polytope_to_fan(simplex(3))[0],
    polytope_to_fan(box(1, 2, 1))[0],
    polytope_to_fan(hirzebruch(2, 1, 3))[0],
    polytope_to_fan(simplex(2))[0],
])


@settings(max_examples=40, deadline=None)
@given(data=st.data(), fan=fans)
def test_symmetric_under_permutation(data, fan):
    divisors = [_random_divisor(data.draw, len(fan.rays)) for _ in range(fan.dim)]
    reference = intersection_number(fan, divisors)
    for perm in itertools.permutations(divisors):
        assert intersection_number(fan, list(perm)) == reference


@settings(max_examples=40, deadline=None)
@given(data=st.data(), fan=fans)
def test_linear_equivalence_invariance(data, fan):
    divisors = [_random_divisor(data.draw, len(fan.rays)) for _ in range(fan.dim)]
    m = data.draw(st.lists(st.integers(-4, 4), min_size=fan.dim, max_size=fan.dim))
    slot = data.draw(st.integers(0, fan.dim - 1))
    shifted = list(divisors)
    shifted[slot] = shifted[slot] + principal_divisor(fan, m)
    assert intersection_number(fan, shifted) == intersection_number(fan, divisors)
