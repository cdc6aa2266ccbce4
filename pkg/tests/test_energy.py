from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from suite import make, trivial
from zcrit.charge import CentralChargeSpec, dhym_charge, k_stability_charge, map_type_charge
from zcrit.energy import (
    EnergyError,
    LogGrid,
    PolynomialPotential,
    Potential,
    aitken_limit,
    deligne_eval,
    energy_path,
    slope_along_tc,
    variation_check,
    z_energy,
    z_functional,
)
from zcrit.metricsolve import MomentumProfile, evaluate_ztilde, solve_zcritical
from zcrit.qq import QQi
from zcrit.toric import interval

GRID = LogGrid.symmetric()
K1 = k_stability_charge(1)
TILTED = CentralChargeSpec((QQi(-1, Fraction(1, 2)), QQi(0, 1)), (QQi(1), QQi(1)), 1)
MAP1 = map_type_charge(1, [(-1, (0,))])

coefficient = st.floats(min_value=-0.25, max_value=0.25)


def poly(coeffs) -> Potential:
    return PolynomialPotential(tuple(coeffs)).on_grid(GRID)


def test_deligne_of_zero_potentials():
    z = Potential.zero(GRID)
    ref = GRID.reference_density
    assert deligne_eval(GRID, [z, z], [ref, ref]) == 0
    assert deligne_eval(GRID, [z], [ref], ref) == 0


def test_mismatched_grids_rejected():
    other = LogGrid.symmetric(10.0, 0.1)
    with pytest.raises(EnergyError):
        deligne_eval(GRID, [Potential.zero(other), Potential.zero(GRID)], [GRID.reference_density] * 2)
    with pytest.raises(EnergyError):
        deligne_eval(GRID, [Potential.zero(GRID)], [GRID.reference_density] * 2)


@settings(max_examples=30, deadline=None)
@given(a=st.lists(coefficient, min_size=4, max_size=4), b=st.lists(coefficient, min_size=4, max_size=4),
       w=st.floats(min_value=0.2, max_value=3.0))
def test_deligne_symmetry(a, b, w):
    psi0, psi1 = poly(a), poly(b)
    eta0, eta1 = GRID.reference_density, w * GRID.reference_density
    lhs = deligne_eval(GRID, [psi0, psi1], [eta0, eta1])
    rhs = deligne_eval(GRID, [psi1, psi0], [eta1, eta0])
    assert abs(lhs - rhs) < 1e-8


@settings(max_examples=30, deadline=None)
@given(a=st.lists(coefficient, min_size=4, max_size=4), a2=st.lists(coefficient, min_size=4, max_size=4),
       b=st.lists(coefficient, min_size=4, max_size=4))
def test_change_of_potential_in_each_slot(a, a2, b):
    ref = GRID.reference_density
    psi0, psi0b, psi1 = poly(a), poly(a2), poly(b)
    first = deligne_eval(GRID, [psi0b, psi1], [ref, ref]) - deligne_eval(GRID, [psi0, psi1], [ref, ref])
    assert abs(first - GRID.integrate((psi0b.value - psi0.value) * (ref + psi1.second))) < 1e-8
    second = deligne_eval(GRID, [psi1, psi0b], [ref, ref]) - deligne_eval(GRID, [psi1, psi0], [ref, ref])
    assert abs(second - GRID.integrate((psi0b.value - psi0.value) * (ref + psi1.second))) < 1e-8
    theta = 0.7 * ref
    third = deligne_eval(GRID, [psi0b], [ref], theta) - deligne_eval(GRID, [psi0], [ref], theta)
    assert abs(third - GRID.integrate((psi0b.value - psi0.value) * theta)) < 1e-12


@pytest.mark.parametrize("spec", [K1, TILTED, MAP1])
def test_energy_vanishes_at_reference(spec):
    assert z_energy(GRID, Potential.zero(GRID), spec, 3) == 0
    assert z_functional(GRID, Potential.zero(GRID), spec, 3) == 0


@settings(max_examples=20, deadline=None)
@given(a=st.lists(coefficient, min_size=4, max_size=4), c=st.floats(min_value=-5, max_value=5),
       which=st.integers(0, 2))
def test_energy_ignores_constants(a, c, which):
    spec = (K1, TILTED, MAP1)[which]
    psi = poly(a)
    assert abs(z_energy(GRID, psi.shifted(c), spec, 4) - z_energy(GRID, psi, spec, 4)) < 1e-10


def test_degenerate_metric_rejected():
    bad = PolynomialPotential((0.0, 0.0, -30.0)).on_grid(GRID)
    with pytest.raises(EnergyError):
        z_energy(GRID, bad, K1, 2)


def test_energy_needs_dimension_one():
    with pytest.raises(EnergyError):
        z_energy(GRID, Potential.zero(GRID), dhym_charge(2), 2)


@pytest.mark.parametrize("spec", [K1, TILTED])
def test_gradient_at_the_round_metric(spec):
    # the round metric is critical for both charges, so the derivative vanishes
    direction = PolynomialPotential((0.0, 0.3, -0.2, 0.15))
    vc = variation_check(PolynomialPotential((0.0,)), direction, spec, 4, t=1e-3)
    assert abs(vc.finite_difference) < 1e-9 and abs(vc.operator_pairing) < 1e-9


@pytest.mark.parametrize("spec", [K1, TILTED])
def test_gradient_away_from_critical_point(spec):
    base = PolynomialPotential((0.0, 0.4, -0.3, 0.2))
    direction = PolynomialPotential((0.0, 0.1, 0.5, -0.4))
    vc = variation_check(base, direction, spec, 4, t=1e-3)
    assert vc.relative_error <= 1e-4


def test_aitken_is_exact_on_geometric_tails():
    values = [3.0 + 2.0 * 0.5**m for m in range(5)]
    limit, change = aitken_limit(values)
    assert abs(limit - 3.0) < 1e-12 and change < 1e-12
    with pytest.raises(EnergyError):
        aitken_limit(values[:3])


def test_slope_of_trivial_configuration():
    report = slope_along_tc(trivial(interval(), 2), K1, 3)
    assert report.exact == 0
    assert abs(report.numeric) <= 1e-8


def test_slope_of_product_configuration():
    tc = make(interval(), [((Fraction(1),), Fraction(0))], Fraction(2))
    report = slope_along_tc(tc, K1, 3)
    assert report.discrepancy <= 1e-3


def test_slope_rejects_uneven_samples():
    with pytest.raises(EnergyError):
        slope_along_tc(trivial(interval(), 2), K1, 3, taus=(4, 6, 9, 12))


def test_path_csv_layout():
    path = energy_path(trivial(interval(), 2), K1, 3, taus=(4, 6))
    lines = path.to_csv().split("\r\n")
    assert lines[0] == "tau,energy,denergy_dtau"
    assert len([ln for ln in lines if ln]) == 3


def test_futaki_type_vanishing_at_critical_metric():
    start = MomentumProfile.from_function(lambda x: x * (1 - x) * (1 + 0.2 * x * x), 257)
    sol, _ = solve_zcritical(start, TILTED, 6)
    pc = evaluate_ztilde(sol, TILTED, 6)
    hamiltonian = sol.x - 0.5
    assert abs(np.sum(hamiltonian * pc.rotated.imag * pc.weights)) <= 1e-8
