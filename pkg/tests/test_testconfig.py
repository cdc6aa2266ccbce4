from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import boundary_df_interval, boundary_df_rectangle, polygon_volume
from suite import interval_suite, make, square_suite, trivial
from zcrit.charge import (
    CentralChargeSpec,
    IntersectionTable,
    charge_coefficients,
    dhym_charge,
    k_stability_charge,
    map_type_charge,
)
from zcrit.qq import QQi
from zcrit.testconfig import (
    PLFunction,
    TestConfigError,
    TestConfigSpec,
    base_table,
    bridge_prediction,
    donaldson_futaki,
    leading_coefficient,
    pairing_rational_function,
    phase_pairing,
    stability_verdict,
    total_space,
    total_space_polytope,
    z_of_testconfig,
)
from zcrit.toric import NonDelzantError, box, intersection_number, interval

KINK = [((F(0),), F(0)), ((F(2),), F(-1))]


def _zx(tc, spec, k):
    coeffs = charge_coefficients(spec, base_table(tc, spec))
    return sum((c * F(k) ** l for l, c in enumerate(coeffs)), QQi(0))


def test_trivial_total_space_is_p1xp1():
    fan, Lbar, K_rel, fibre = total_space(trivial(interval()))
    assert len(fan.rays) == 4
    assert intersection_number(fan, [Lbar, Lbar]) == 2
    assert intersection_number(fan, [Lbar, fibre]) == 1


def test_triangle_total_space():
    tc = TestConfigSpec(interval(), PLFunction((((F(1),), F(0)),)), F(1))
    fan, Lbar, _, _ = total_space(tc)
    assert len(fan.rays) == 3
    verts = total_space_polytope(tc).irredundant().vertices().keys()
    assert intersection_number(fan, [Lbar, Lbar]) == 2 * polygon_volume(verts) == 1


def test_kink_total_space_lattice_data():
    strict = TestConfigSpec(interval(), PLFunction(tuple(KINK)), F(1))
    with pytest.raises(NonDelzantError):
        total_space(strict)
    tc = make(interval(), KINK, F(1))
    fan, Lbar, _, _ = total_space(tc)
    assert len(fan.rays) == 4
    verts = total_space_polytope(tc).irredundant().vertices().keys()
    assert intersection_number(fan, [Lbar, Lbar]) == 2 * polygon_volume(verts)


def test_height_below_max_is_rejected():
    with pytest.raises(TestConfigError):
        make(interval(), KINK, F(1, 2))


def test_collapsing_vertex_is_rejected_for_df():
    tc = TestConfigSpec(interval(), PLFunction((((F(1),), F(0)),)), F(1))
    with pytest.raises(TestConfigError, match="fibre"):
        donaldson_futaki(tc)


def test_df_examples():
    df, mu = donaldson_futaki(make(interval(), KINK, F(2)))
    assert df == F(1, 2) and mu == 2
    assert donaldson_futaki(make(interval(), [((F(1),), F(0))], F(2)))[0] == 0
    assert donaldson_futaki(trivial(interval()))[0] == 0
    assert donaldson_futaki(trivial(box(1, 1)))[0] == 0


@pytest.mark.parametrize("label, pieces, tc", interval_suite() + square_suite(), ids=lambda v: v if isinstance(v, str) else "")
def test_df_matches_boundary_oracle(label, pieces, tc):
    n = tc.base.dim
    oracle = boundary_df_interval(pieces) if n == 1 else boundary_df_rectangle(pieces)
    df, _ = donaldson_futaki(tc)
    scale = 1 if n == 1 else 2
    assert df == scale * oracle


@settings(max_examples=30, deadline=None)
@given(m=st.fractions(min_value=-5, max_value=5, max_denominator=7),
       k=st.fractions(min_value=1, max_value=50, max_denominator=3),
       which=st.integers(0, 4))
def test_twist_identity(m, k, which):
    _, _, tc = interval_suite()[which]
    spec = dhym_charge(1)
    base = z_of_testconfig(tc, spec, k).z
    twisted = z_of_testconfig(tc.with_twist(m), spec, k).z
    assert twisted - base == _zx(tc, spec, k) * m
    assert phase_pairing(tc.with_twist(m), spec, k) == phase_pairing(tc, spec, k)


@pytest.mark.parametrize("spec", [k_stability_charge(1), dhym_charge(1), map_type_charge(1, [(-1, (0,))])])
def test_trivial_configuration_pairs_to_zero(spec):
    for k in (1, 3, F(17, 2)):
        assert phase_pairing(trivial(interval()), spec, k) == 0


def test_kink_leading_coefficient_matches_df():
    tc = make(interval(), KINK, F(2))
    spec = k_stability_charge(1)
    lead = leading_coefficient(pairing_rational_function(tc, spec))
    assert lead > 0
    assert lead == bridge_prediction(tc, spec) == F(1, 2)


def test_verdicts():
    tc = make(interval(), KINK, F(2))
    spec = k_stability_charge(1)
    verdict = stability_verdict(tc, spec, range(1, 21))
    assert verdict.kind == "stable_along_tc"
    assert verdict.k_threshold is not None and verdict.bridge_holds
    flipped = CentralChargeSpec((QQi(1), QQi(0, 1)), spec.chern, 1)
    assert stability_verdict(tc, flipped, range(1, 21)).kind == "unstable_at"
    assert stability_verdict(trivial(interval()), spec, range(1, 6)).kind == "semistable_boundary"


def test_verdict_on_surface_with_exponential_charge():
    _, _, tc = square_suite()[0]
    verdict = stability_verdict(tc, dhym_charge(2), range(5, 40, 5))
    assert verdict.kind == "stable_along_tc"
    assert verdict.leading == verdict.predicted_leading


def test_empty_range():
    with pytest.raises(ValueError):
        stability_verdict(trivial(interval()), k_stability_charge(1), [])


def test_table_dimension_mismatch():
    tc = trivial(interval())
    with pytest.raises(TestConfigError):
        z_of_testconfig(tc, dhym_charge(2), 1)


def test_base_table_is_p1():
    table = base_table(trivial(interval()), k_stability_charge(1))
    assert table == IntersectionTable(1, {(1, 0, 0): 1, (0, 1, 0): -2})
