import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zcrit.charge import (
    CentralChargeSpec,
    ChargeValidationError,
    Classification,
    DegenerateChargeError,
    IntersectionTable,
    ZeroChargeError,
    charge_coefficients,
    dhym_charge,
    evaluate_charge,
    k_stability_charge,
    map_type_charge,
    phase_expansion,
    phase_sweep,
    validate_charge,
)
from zcrit.qq import QQi
from zcrit.toric import build_intersection_table, polytope_to_fan, simplex

I = QQi(0, 1)

P1_TABLE = IntersectionTable(1, {(1, 0, 0): 1, (0, 1, 0): -2})


def p2_table(spec):
    fan, L = polytope_to_fan(simplex(2))
    return build_intersection_table(fan, L, spec)


rationals = st.fractions(min_value=-20, max_value=20, max_denominator=12)


def test_k_charge_on_p1():
    z = evaluate_charge(k_stability_charge(1), P1_TABLE, 3).z
    assert z == QQi(2, 3)


def test_exponential_charge_on_p1_raw_form():
    spec = dhym_charge(1, normalised=False)
    assert evaluate_charge(spec, P1_TABLE, 1).z == QQi(-2, 1)


def test_top_term_only():
    spec = CentralChargeSpec((QQi(5), QQi(-3), I), (QQi(1), QQi(1), QQi(0)), 2)
    # a_j = 0 for j >= 2 still leaves a_1 = 1, so kill K via the table instead
    table = IntersectionTable(2, {(2, 0, 0): 4, (1, 1, 0): 0, (0, 2, 0): 0})
    value = evaluate_charge(spec, table, 7)
    assert value.z == QQi(0, 4 * 49)
    assert value.phase == pytest.approx(math.pi / 2)


def test_classification_examples():
    n2 = CentralChargeSpec((QQi(0), QQi(-1), I), (QQi(1), QQi(1), QQi(0)), 2)
    # Re rho_0 = 0 misses the strict sign needed on rho_{n-2}
    assert validate_charge(n2) is Classification.NON_DEGENERATE
    n2_adm = CentralChargeSpec((QQi(1), QQi(-1), I), n2.chern, 2)
    assert validate_charge(n2_adm) is Classification.ADMISSIBLE
    assert validate_charge(dhym_charge(3)) is Classification.ADMISSIBLE
    mt = map_type_charge(2, [(-1, (0,))])
    assert validate_charge(mt) is Classification.MAP_TYPE
    flipped = CentralChargeSpec((QQi(0), QQi(1), I), (QQi(1), QQi(1), QQi(0)), 2)
    assert validate_charge(flipped) is Classification.GENERAL
    seg = CentralChargeSpec(n2.rho, n2.chern, 2, extra_classes=("segre_2",))
    assert validate_charge(seg) is Classification.UNSUPPORTED


@pytest.mark.parametrize(
    "rho, chern",
    [
        ((QQi(0), QQi(-1), QQi(0, 2)), (QQi(1), QQi(1), QQi(0))),
        ((QQi(-1), I), (QQi(1), QQi(1), QQi(0))),
        ((QQi(0), QQi(-1), I), (QQi(1), QQi(2), QQi(0))),
    ],
)
def test_malformed_charges(rho, chern):
    with pytest.raises(ChargeValidationError):
        validate_charge(CentralChargeSpec(rho, chern, 2))


def test_theta_degree_mismatch():
    spec = CentralChargeSpec((QQi(-1), I), (QQi(1), QQi(1)), 1, theta={1: [(1, (0, 1))]})
    with pytest.raises(ChargeValidationError):
        validate_charge(spec)


def test_zero_charge():
    spec = CentralChargeSpec((QQi(-1), I), (QQi(1), QQi(1)), 1)
    table = IntersectionTable(1, {(1, 0, 0): 0, (0, 1, 0): 0})
    with pytest.raises(ZeroChargeError):
        evaluate_charge(spec, table, 2)


def test_phase_expansion_p1():
    coeffs = phase_expansion(k_stability_charge(1), P1_TABLE, 4)
    assert coeffs[:3] == [Fraction(-2), Fraction(0), Fraction(8, 3)]
    # arctan series of arg(ik + 2) - pi/2 = -arctan(2/k)
    for m, c in enumerate(coeffs, start=1):
        expected = 0 if m % 2 == 0 else (-1) ** ((m + 1) // 2) * Fraction(2**m, m)
        assert c == expected


def test_phase_expansion_without_canonical_term():
    table = IntersectionTable(1, {(1, 0, 0): 3, (0, 1, 0): 0})
    assert phase_expansion(k_stability_charge(1), table, 2)[0] == 0


def test_phase_expansion_against_floats_on_p2():
    spec = dhym_charge(2)
    table = p2_table(spec)
    orders = 3
    coeffs = phase_expansion(spec, table, orders)
    for k in (1e3, 1e4):
        exact = evaluate_charge(spec, table, k).phase - math.pi / 2
        series = sum(float(c) * k ** -(m + 1) for m, c in enumerate(coeffs))
        assert abs(exact - series) < 10 * k ** -(orders + 1)


def test_phase_expansion_rejects_degenerate():
    spec = CentralChargeSpec((QQi(1), I), (QQi(1), QQi(1)), 1)
    with pytest.raises(DegenerateChargeError):
        phase_expansion(spec, P1_TABLE, 2)


def test_phase_sweep_tends_to_quarter_turn():
    ks = [Fraction(1), Fraction(10), Fraction(1000), Fraction(10**6)]
    phases = phase_sweep(k_stability_charge(1), P1_TABLE, ks)
    assert abs(phases[-1] - math.pi / 2) < 1e-5
    assert all(abs(a - b) < math.pi for a, b in zip(phases, phases[1:]))


@settings(max_examples=60, deadline=None)
@given(c=st.fractions(min_value=Fraction(1, 5), max_value=7, max_denominator=9),
       k=st.fractions(min_value=Fraction(1, 3), max_value=40, max_denominator=9))
def test_scaling_polarisation_equals_scaling_k(c, k):
    spec = dhym_charge(2)
    table = p2_table(spec)
    assert evaluate_charge(spec, table.scaled(c), k).z == evaluate_charge(spec, table, c * k).z


@settings(max_examples=60, deadline=None)
@given(a=st.lists(rationals, min_size=3, max_size=3), b=st.lists(rationals, min_size=3, max_size=3),
       k=st.fractions(min_value=1, max_value=30, max_denominator=5))
def test_additive_in_table(a, b, k):
    spec = dhym_charge(2)
    keys = [(2, 0, 0), (1, 1, 0), (0, 2, 0)]
    ta = IntersectionTable(2, dict(zip(keys, a)))
    tb = IntersectionTable(2, dict(zip(keys, b)))
    za = sum((c * k**l for l, c in enumerate(charge_coefficients(spec, ta))), QQi(0))
    zb = sum((c * k**l for l, c in enumerate(charge_coefficients(spec, tb))), QQi(0))
    zab = sum((c * k**l for l, c in enumerate(charge_coefficients(spec, ta + tb))), QQi(0))
    assert zab == za + zb


def test_upper_half_plane_for_large_k():
    for spec in (k_stability_charge(2), dhym_charge(2)):
        table = p2_table(spec)
        assert evaluate_charge(spec, table, 10**4).z.im > 0
