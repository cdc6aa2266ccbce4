"""Toric test configurations: total spaces, charges, Donaldson-Futaki invariants, verdicts.

A convex rational piecewise-linear f on the moment polytope P and a height
R >= max f give the polytope Q = {(x, s) : x in P, 0 <= s <= R - f(x)}.  Its
toric variety compactifies the degeneration over P^1; the facet s = 0 is a
copy of X and is the fibre class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, NamedTuple, Sequence

from zcrit.charge import (
    CentralChargeSpec,
    IntersectionTable,
    ZeroChargeError,
    charge_coefficients,
    check_well_formed,
)
from zcrit.linalg import dot, solve
from zcrit.qq import QQi, as_fraction
from zcrit.toric import (
    DelzantPolytope,
    Fan,
    ToricDivisor,
    build_intersection_table,
    canonical_divisor,
    intersection_number,
    polytope_to_fan,
)


class TestConfigError(ValueError):
    """Malformed test configuration data."""

    __test__ = False


@dataclass(frozen=True)
class PLFunction:
    """max over pieces of <grad, x> + const."""

    pieces: tuple[tuple[tuple[Fraction, ...], Fraction], ...]

    def __post_init__(self):
        norm = tuple(
            (tuple(as_fraction(g) for g in grad), as_fraction(c)) for grad, c in self.pieces
        )
        if not norm:
            raise TestConfigError("a PL function needs at least one affine piece")
        object.__setattr__(self, "pieces", norm)

    def __call__(self, x: Sequence) -> Fraction:
        return max(dot(g, x) + c for g, c in self.pieces)

    def value_float(self, x) -> float:
        return max(sum(float(gi) * xi for gi, xi in zip(g, x)) + float(c) for g, c in self.pieces)

    @property
    def is_affine(self) -> bool:
        return len(set(self.pieces)) == 1


@dataclass(frozen=True)
class TestConfigSpec:
    __test__ = False

    base: DelzantPolytope
    f: PLFunction
    R: Fraction
    twist: Fraction = Fraction(0)
    allow_orbifold: bool = False

    def __post_init__(self):
        object.__setattr__(self, "R", as_fraction(self.R))
        object.__setattr__(self, "twist", as_fraction(self.twist))
        for grad, _ in self.f.pieces:
            if len(grad) != self.base.dim:
                raise TestConfigError(f"gradient {grad} has wrong dimension for a {self.base.dim}-dimensional base")
        top = max(self.f(v) for v in self.base.irredundant().vertices())
        if self.R < top:
            raise TestConfigError(f"height R = {self.R} is below max f = {top}")

    def with_twist(self, m) -> "TestConfigSpec":
        return TestConfigSpec(self.base, self.f, self.R, as_fraction(m), self.allow_orbifold)


class TotalSpace(NamedTuple):
    fan: Fan
    polarisation: ToricDivisor
    relative_canonical: ToricDivisor
    fibre: ToricDivisor


def _primitive(vec: Sequence[Fraction], const: Fraction) -> tuple[tuple[int, ...], Fraction]:
    den = 1
    for v in vec:
        den = den * v.denominator // math.gcd(den, v.denominator)
    ints = [int(v * den) for v in vec]
    g = math.gcd(*ints)
    return tuple(i // g for i in ints), const * den / g


def total_space_polytope(tc: TestConfigSpec) -> DelzantPolytope:
    P = tc.base.irredundant()
    d = P.dim
    normals = [tuple(u) + (0,) for u in P.normals]
    consts = list(P.constants)
    normals.append(tuple([0] * d + [1]))
    consts.append(Fraction(0))
    for grad, c in tc.f.pieces:
        u, b = _primitive([-g for g in grad] + [Fraction(-1)], c - tc.R)
        normals.append(u)
        consts.append(b)
    return DelzantPolytope(tuple(normals), tuple(consts))


def total_space(tc: TestConfigSpec) -> TotalSpace:
    """Fan, polarisation (twisted), relative canonical divisor and fibre class of the compactified total space."""
    Q = total_space_polytope(tc)
    try:
        fan, L = polytope_to_fan(Q, require_smooth=not tc.allow_orbifold)
    except ValueError as exc:
        raise type(exc)(f"{exc}; raise R or refine f, or allow orbifold total spaces") from exc
    d = fan.dim
    top = tuple([0] * (d - 1) + [1])
    if top not in fan.rays:
        raise TestConfigError("facet s = 0 missing from the total space")
    fibre = ToricDivisor.prime(len(fan.rays), fan.rays.index(top))
    K_rel = canonical_divisor(fan) + 2 * fibre
    return TotalSpace(fan, L + tc.twist * fibre, K_rel, fibre)


def is_fibration(tc: TestConfigSpec) -> bool:
    """True when the projection of the total space to P^1 is a morphism (no vertex of Q collapses)."""
    return all(tc.f(v) < tc.R for v in tc.base.irredundant().vertices())


def _require_fibration(tc: TestConfigSpec) -> None:
    if not is_fibration(tc):
        raise TestConfigError("R equals max f at a vertex, so the total space does not fibre over P^1; raise R")


def pullback_divisor(total: Fan, base: Fan, D: ToricDivisor) -> ToricDivisor:
    """Pull a base divisor back along the projection forgetting the last coordinate.

    Uses the support function of D evaluated on projected rays; the projection
    must send every cone of the total fan into a cone of the base fan.
    """
    n = base.dim
    coeffs = []
    for w in total.rays:
        pw = w[:n]
        if not any(pw):
            coeffs.append(Fraction(0))
            continue
        value = None
        for cone in base.cones:
            lam = solve([[base.rays[i][r] for i in cone] for r in range(n)], list(pw))
            if lam is not None and all(x >= 0 for x in lam):
                value = sum((x * D.coeffs[i] for x, i in zip(lam, cone)), Fraction(0))
                break
        if value is None:
            raise TestConfigError(f"projected ray {pw} not found in the base fan")
        coeffs.append(value)
    for cone in total.cones:
        images = [total.rays[i][:n] for i in cone]
        if not any(_cone_contains(base, c, [p for p in images if any(p)]) for c in base.cones):
            raise TestConfigError("projection to the base is not a toric morphism; pullbacks undefined")
    return ToricDivisor(tuple(coeffs))


def _cone_contains(base: Fan, cone: Sequence[int], points) -> bool:
    n = base.dim
    for p in points:
        lam = solve([[base.rays[i][r] for i in cone] for r in range(n)], list(p))
        if lam is None or any(x < 0 for x in lam):
            return False
    return True


def _base(tc: TestConfigSpec):
    return polytope_to_fan(tc.base, require_smooth=True)


def base_table(tc: TestConfigSpec, spec: CentralChargeSpec) -> IntersectionTable:
    fan, L = _base(tc)
    return build_intersection_table(fan, L, spec)


def tc_charge_coefficients(tc: TestConfigSpec, spec: CentralChargeSpec) -> list[QQi]:
    """Coefficients e_l with Z_k(X, L) of the test configuration = sum_l e_l k^l."""
    check_well_formed(spec)
    _require_fibration(tc)
    base_fan, _ = _base(tc)
    fan, Lbar, K_rel, _ = total_space(tc)
    n = spec.n
    if fan.dim != n + 1:
        raise TestConfigError("charge dimension does not match the base")
    theta_cache: dict[int, list[tuple[Fraction, list[ToricDivisor]]]] = {}
    for p in range(1, n + 1):
        if spec.theta_vanishes(p):
            continue
        terms = []
        for coeff, mono in spec.theta_component(p):
            divs = [pullback_divisor(fan, base_fan, ToricDivisor.prime(len(base_fan.rays), i)) for i in mono]
            terms.append((coeff, divs))
        theta_cache[p] = terms
    out = []
    for l in range(n + 1):
        acc = QQi(0)
        for p in range(n - l + 1):
            j = n - l - p
            if p == 0:
                val = intersection_number(fan, [Lbar] * (l + 1) + [K_rel] * j)
            elif p in theta_cache:
                val = sum(
                    (c * intersection_number(fan, [Lbar] * (l + 1) + [K_rel] * j + divs) for c, divs in theta_cache[p]),
                    Fraction(0),
                )
            else:
                continue
            acc = acc + spec.chern[j] * val
        out.append(spec.rho[l] * acc / (l + 1))
    return out


def _eval(coeffs: Sequence[QQi], k: Fraction) -> QQi:
    z = QQi(0)
    for l, c in enumerate(coeffs):
        z = z + c * k**l
    return z


@dataclass(frozen=True)
class TCChargeValue:
    z: QQi
    df: Fraction
    slope_mu: Fraction


def donaldson_futaki(tc: TestConfigSpec) -> tuple[Fraction, Fraction]:
    """(DF, mu) with DF = n mu/(n+1) Lbar^(n+1) + Lbar^n . K_rel and mu = -K.L^(n-1)/L^n."""
    _require_fibration(tc)
    base_fan, L = _base(tc)
    n = base_fan.dim
    K = canonical_divisor(base_fan)
    mu = -intersection_number(base_fan, [K] + [L] * (n - 1)) / intersection_number(base_fan, [L] * n)
    fan, Lbar, K_rel, _ = total_space(tc)
    df = n * mu / (n + 1) * intersection_number(fan, [Lbar] * (n + 1)) + intersection_number(fan, [Lbar] * n + [K_rel])
    return df, mu


def z_of_testconfig(tc: TestConfigSpec, spec: CentralChargeSpec, k) -> TCChargeValue:
    kq = as_fraction(k)
    if kq <= 0:
        raise ValueError("k must be positive")
    z = _eval(tc_charge_coefficients(tc, spec), kq)
    df, mu = donaldson_futaki(tc)
    return TCChargeValue(z, df, mu)


def phase_pairing(tc: TestConfigSpec, spec: CentralChargeSpec, k) -> Fraction:
    """Im(Z_k(test configuration) / Z_k(X, L)), exact."""
    kq = as_fraction(k)
    zx = _eval(charge_coefficients(spec, base_table(tc, spec)), kq)
    if not zx:
        raise ZeroChargeError(f"Z_k(X,L) = 0 at k = {kq}")
    return (_eval(tc_charge_coefficients(tc, spec), kq) / zx).im


@dataclass(frozen=True)
class RationalFunction:
    """numerator(k) / denominator(k) with real rational coefficients (index = power)."""

    numerator: tuple[Fraction, ...]
    denominator: tuple[Fraction, ...]

    def __call__(self, k) -> Fraction:
        kq = as_fraction(k)
        num = sum((c * kq**i for i, c in enumerate(self.numerator)), Fraction(0))
        den = sum((c * kq**i for i, c in enumerate(self.denominator)), Fraction(0))
        return num / den


def _trim(c: list[Fraction]) -> tuple[Fraction, ...]:
    while len(c) > 1 and c[-1] == 0:
        c.pop()
    return tuple(c)


def pairing_rational_function(tc: TestConfigSpec, spec: CentralChargeSpec) -> RationalFunction:
    """Im(Z_TC/Z) = Im(Z_TC conj Z) / |Z|^2 as exact polynomials in k."""
    zc = charge_coefficients(spec, base_table(tc, spec))
    tcc = tc_charge_coefficients(tc, spec)
    deg = len(zc) + len(tcc)
    num = [Fraction(0)] * deg
    den = [Fraction(0)] * deg
    for a, x in enumerate(tcc):
        for b, y in enumerate(zc):
            num[a + b] += (x * y.conjugate()).im
    for a, x in enumerate(zc):
        for b, y in enumerate(zc):
            den[a + b] += (x * y.conjugate()).re
    return RationalFunction(_trim(num), _trim(den))


def leading_coefficient(rf: RationalFunction) -> Fraction:
    """lim k * Im(Z_TC/Z) as k -> infinity."""
    dn, dd = len(rf.numerator) - 1, len(rf.denominator) - 1
    if dn + 1 > dd:
        raise ArithmeticError("k * Im(Z_TC/Z) diverges")
    if dn + 1 < dd:
        return Fraction(0)
    return rf.numerator[dn] / rf.denominator[dd]


def bridge_prediction(tc: TestConfigSpec, spec: CentralChargeSpec) -> Fraction:
    """(-Re rho_{n-1} / (n L^n)) * DF."""
    fan, L = _base(tc)
    n = fan.dim
    Ln = intersection_number(fan, [L] * n)
    df, _ = donaldson_futaki(tc)
    return -spec.rho[n - 1].re / (n * Ln) * df


@dataclass
class Verdict:
    kind: str
    k_threshold: Fraction | None
    values: list[tuple[Fraction, Fraction]] = field(default_factory=list)
    leading: Fraction | None = None
    predicted_leading: Fraction | None = None
    df: Fraction | None = None

    @property
    def bridge_holds(self) -> bool:
        return self.leading == self.predicted_leading

    def label(self) -> str:
        if self.kind == "unstable_at":
            return f"unstable_at({self.k_threshold})"
        return self.kind


def stability_verdict(tc: TestConfigSpec, spec: CentralChargeSpec, k_range: Iterable) -> Verdict:
    """Exact signs of Im(Z_k(TC)/Z_k(X)) over ``k_range`` plus the leading-order report.

    stable_along_tc carries the smallest k_0 in the range from which every
    value is positive; unstable_at carries the smallest k from which every
    value is negative.
    """
    ks = sorted({as_fraction(k) for k in k_range})
    if not ks:
        raise ValueError("empty k range")
    rf = pairing_rational_function(tc, spec)
    values = []
    for k in ks:
        den = sum((c * k**i for i, c in enumerate(rf.denominator)), Fraction(0))
        if den == 0:
            raise ZeroChargeError(f"Z_k(X,L) = 0 at k = {k}")
        values.append((k, rf(k)))
    df, _ = donaldson_futaki(tc)
    lead = leading_coefficient(rf)
    predicted = bridge_prediction(tc, spec)

    def tail_start(pred) -> Fraction | None:
        start = None
        for k, v in reversed(values):
            if pred(v):
                start = k
            else:
                break
        return start

    if all(v == 0 for _, v in values):
        kind, thr = "semistable_boundary", None
    elif values[-1][1] > 0:
        kind, thr = "stable_along_tc", tail_start(lambda v: v > 0)
    elif values[-1][1] < 0:
        kind, thr = "unstable_at", tail_start(lambda v: v < 0)
    else:
        kind, thr = "semistable_boundary", None
    return Verdict(kind, thr, values, lead, predicted, df)


def pl_from_json(pieces: Sequence[dict]) -> PLFunction:
    return PLFunction(tuple((tuple(p["grad"]), p["const"]) for p in pieces))
