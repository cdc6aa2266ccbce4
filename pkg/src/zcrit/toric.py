"""Exact intersection theory on complete simplicial toric varieties.

Smooth fans are the default; simplicial (orbifold) fans are accepted only when
a caller opts in, and then distinct rays spanning a cone of multiplicity m
intersect to 1/m.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from zcrit.charge import CentralChargeSpec, IntersectionTable, check_well_formed
from zcrit.linalg import det, dot, rank, solve
from zcrit.qq import as_fraction


class FanError(ValueError):
    """Fan is not primitive, complete or (when required) smooth."""


class NonDelzantError(ValueError):
    """A polytope vertex fails the Delzant (or simplicity) condition."""


@dataclass(frozen=True)
class Fan:
    rays: tuple[tuple[int, ...], ...]
    cones: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "rays", tuple(tuple(int(x) for x in r) for r in self.rays))
        object.__setattr__(self, "cones", tuple(tuple(sorted(int(i) for i in c)) for c in self.cones))

    @property
    def dim(self) -> int:
        return len(self.rays[0])

    def multiplicity(self, cone: Sequence[int]) -> int:
        return abs(int(det([self.rays[i] for i in cone])))

    @property
    def is_smooth(self) -> bool:
        return all(self.multiplicity(c) == 1 for c in self.cones)

    def cones_containing(self, subset) -> list[int]:
        s = set(subset)
        return [idx for idx, c in enumerate(self.cones) if s.issubset(c)]

    def check(self, require_smooth: bool = True, samples: int = 256) -> None:
        d = self.dim
        for r in self.rays:
            if len(r) != d:
                raise FanError("rays of mixed dimension")
            if math.gcd(*r) != 1:
                raise FanError(f"ray {r} is not primitive")
        for c in self.cones:
            if len(c) != d:
                raise FanError(f"maximal cone {c} is not full-dimensional simplicial")
            m = self.multiplicity(c)
            if m == 0:
                raise FanError(f"cone {c} is degenerate")
            if require_smooth and m != 1:
                raise FanError(f"cone {c} has multiplicity {m}; only smooth fans are supported")
        walls: dict[tuple[int, ...], int] = {}
        for c in self.cones:
            for w in itertools.combinations(c, d - 1):
                walls[w] = walls.get(w, 0) + 1
        bad = [w for w, cnt in walls.items() if cnt != 2]
        if bad:
            raise FanError(f"fan is not complete: wall {bad[0]} lies in {walls[bad[0]]} cone(s)")
        rng = np.random.default_rng(20240101)
        mats = [np.array([self.rays[i] for i in c], dtype=float).T for c in self.cones]
        for _ in range(samples):
            v = rng.normal(size=d)
            if not any(np.all(np.linalg.solve(m, v) >= -1e-12) for m in mats):
                raise FanError(f"fan is not complete: direction {v.round(3).tolist()} uncovered")


@dataclass(frozen=True)
class ToricDivisor:
    coeffs: tuple[Fraction, ...]

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(as_fraction(c) for c in self.coeffs))

    def __add__(self, other: "ToricDivisor") -> "ToricDivisor":
        if len(other.coeffs) != len(self.coeffs):
            raise ValueError("divisors live on different fans")
        return ToricDivisor(tuple(a + b for a, b in zip(self.coeffs, other.coeffs)))

    def __sub__(self, other: "ToricDivisor") -> "ToricDivisor":
        return self + (-1) * other

    def __rmul__(self, c) -> "ToricDivisor":
        c = as_fraction(c)
        return ToricDivisor(tuple(c * a for a in self.coeffs))

    def __neg__(self) -> "ToricDivisor":
        return (-1) * self

    @classmethod
    def prime(cls, nrays: int, i: int) -> "ToricDivisor":
        return cls(tuple(Fraction(int(j == i)) for j in range(nrays)))

    @classmethod
    def zero(cls, nrays: int) -> "ToricDivisor":
        return cls(tuple(Fraction(0) for _ in range(nrays)))


def canonical_divisor(fan: Fan) -> ToricDivisor:
    return ToricDivisor(tuple(Fraction(-1) for _ in fan.rays))


def principal_divisor(fan: Fan, m: Sequence) -> ToricDivisor:
    """div(chi^m) = sum <m, v_i> D_i, linearly equivalent to zero."""
    return ToricDivisor(tuple(dot(m, v) for v in fan.rays))


@lru_cache(maxsize=None)
def _dual_vector(fan: Fan, cone_idx: int, ray: int) -> tuple[Fraction, ...]:
    cone = fan.cones[cone_idx]
    mat = [fan.rays[i] for i in cone]
    rhs = [Fraction(int(i == ray)) for i in cone]
    return tuple(solve(mat, rhs))


@lru_cache(maxsize=None)
def _monomial_value(fan: Fan, mono: tuple[int, ...]) -> Fraction:
    distinct = sorted(set(mono))
    containing = fan.cones_containing(distinct)
    if not containing:
        return Fraction(0)
    if len(distinct) == len(mono):
        return Fraction(1, fan.multiplicity(fan.cones[containing[0]]))
    counts = {i: mono.count(i) for i in distinct}
    repeated = min(i for i, c in counts.items() if c > 1)
    cone_idx = containing[0]
    m = _dual_vector(fan, cone_idx, repeated)
    cone = set(fan.cones[cone_idx])
    rest = list(mono)
    rest.remove(repeated)
    total = Fraction(0)
    for c, v in enumerate(fan.rays):
        if c in cone:
            continue
        w = dot(m, v)
        if w:
            total -= w * _monomial_value(fan, tuple(sorted(rest + [c])))
    return total


def monomial_product(divisors: Sequence[ToricDivisor]) -> dict[tuple[int, ...], Fraction]:
    """Expand a product of divisors into sorted ray monomials."""
    terms: dict[tuple[int, ...], Fraction] = {(): Fraction(1)}
    for D in divisors:
        new: dict[tuple[int, ...], Fraction] = {}
        for mono, c in terms.items():
            for i, a in enumerate(D.coeffs):
                if a:
                    key = tuple(sorted(mono + (i,)))
                    new[key] = new.get(key, Fraction(0)) + c * a
        terms = new
    return terms


def intersection_number(fan: Fan, divisors: Sequence[ToricDivisor]) -> Fraction:
    """Top intersection product of ``dim`` divisors."""
    if len(divisors) != fan.dim:
        raise ValueError(f"need {fan.dim} divisors, got {len(divisors)}")
    for D in divisors:
        if len(D.coeffs) != len(fan.rays):
            raise ValueError("divisor length does not match the number of rays")
    total = Fraction(0)
    for mono, c in monomial_product(divisors).items():
        total += c * _monomial_value(fan, mono)
    return total


def monomial_divisors(fan: Fan, mono: Sequence[int]) -> list[ToricDivisor]:
    return [ToricDivisor.prime(len(fan.rays), i) for i in mono]


def build_intersection_table(fan: Fan, L: ToricDivisor, spec: CentralChargeSpec) -> IntersectionTable:
    """All numbers L^l K^j Theta_p (l + j + p = n) that the charge needs."""
    check_well_formed(spec)
    n = fan.dim
    if spec.n != n:
        raise ValueError(f"charge dimension {spec.n} differs from variety dimension {n}")
    K = canonical_divisor(fan)
    entries = {}
    for l in range(n + 1):
        for p in range(n - l + 1):
            j = n - l - p
            if p and spec.theta_vanishes(p):
                continue
            val = Fraction(0)
            for coeff, mono in spec.theta_component(p):
                if coeff:
                    val += coeff * intersection_number(fan, [L] * l + [K] * j + monomial_divisors(fan, mono))
            entries[(l, j, p)] = val
    return IntersectionTable(n, entries)


@dataclass(frozen=True)
class DelzantPolytope:
    """Polytope {x : <x, u_i> >= c_i} with primitive integer inward normals."""

    normals: tuple[tuple[int, ...], ...]
    constants: tuple[Fraction, ...]

    def __post_init__(self):
        object.__setattr__(self, "normals", tuple(tuple(int(x) for x in u) for u in self.normals))
        object.__setattr__(self, "constants", tuple(as_fraction(c) for c in self.constants))
        if len(self.normals) != len(self.constants):
            raise ValueError("normals and constants differ in length")
        for u in self.normals:
            if math.gcd(*u) != 1:
                raise ValueError(f"normal {u} is not primitive")

    @property
    def dim(self) -> int:
        return len(self.normals[0])

    def contains(self, x: Sequence) -> bool:
        return all(dot(x, u) >= c for u, c in zip(self.normals, self.constants))

    def vertices(self) -> dict[tuple[Fraction, ...], tuple[int, ...]]:
        """Vertex -> indices of the inequalities tight there."""
        d = self.dim
        found: dict[tuple[Fraction, ...], tuple[int, ...]] = {}
        for subset in itertools.combinations(range(len(self.normals)), d):
            x = solve([self.normals[i] for i in subset], [self.constants[i] for i in subset])
            if x is None or not self.contains(x):
                continue
            key = tuple(x)
            if key not in found:
                found[key] = tuple(i for i, (u, c) in enumerate(zip(self.normals, self.constants)) if dot(x, u) == c)
        return found

    def irredundant(self) -> "DelzantPolytope":
        """Drop inequalities that do not cut out a facet."""
        verts = self.vertices()
        d = self.dim
        if not verts:
            raise ValueError("polytope is empty")
        pts = list(verts)
        if rank([[a - b for a, b in zip(p, pts[0])] for p in pts[1:]] or [[0] * d]) != d:
            raise ValueError("polytope is not full-dimensional")
        keep = []
        for i in range(len(self.normals)):
            on = [p for p, tight in verts.items() if i in tight]
            if len(on) >= d and rank([[a - b for a, b in zip(p, on[0])] for p in on[1:]]) == d - 1:
                keep.append(i)
        return DelzantPolytope(tuple(self.normals[i] for i in keep), tuple(self.constants[i] for i in keep))


@lru_cache(maxsize=256)
def polytope_to_fan(P: DelzantPolytope, require_smooth: bool = True) -> tuple[Fan, ToricDivisor]:
    """Normal fan of P and the divisor L = -sum c_i D_i.

    Redundant inequalities are discarded first.  Every vertex must be simple,
    and with ``require_smooth`` its normals must form a lattice basis.
    """
    Q = P.irredundant()
    d = Q.dim
    cones = []
    for vertex, tight in sorted(Q.vertices().items()):
        if len(tight) != d:
            raise NonDelzantError(f"vertex {[str(v) for v in vertex]} is not simple ({len(tight)} facets meet)")
        mult = abs(det([Q.normals[i] for i in tight]))
        if mult == 0 or (require_smooth and mult != 1):
            raise NonDelzantError(
                f"vertex {[str(v) for v in vertex]} is not Delzant: normals {[Q.normals[i] for i in tight]} "
                f"have determinant {mult}"
            )
        cones.append(tight)
    fan = Fan(Q.normals, tuple(cones))
    # a normal fan of a bounded polytope is complete, so direction sampling is skipped
    fan.check(require_smooth=require_smooth, samples=0)
    L = ToricDivisor(tuple(-c for c in Q.constants))
    return fan, L


def polytope_from_json(obj: dict) -> DelzantPolytope:
    return DelzantPolytope(tuple(tuple(u) for u in obj["normals"]), tuple(as_fraction(c) for c in obj["constants"]))


def fan_from_json(obj: dict) -> Fan:
    return Fan(tuple(tuple(r) for r in obj["rays"]), tuple(tuple(c) for c in obj["cones"]))


def interval(a=0, b=1) -> DelzantPolytope:
    return DelzantPolytope(((1,), (-1,)), (as_fraction(a), -as_fraction(b)))


def box(*sides) -> DelzantPolytope:
    """Product of intervals [0, s_1] x ... x [0, s_d]."""
    d = len(sides)
    normals, consts = [], []
    for i, s in enumerate(sides):
        e = [0] * d
        e[i] = 1
        normals.append(tuple(e))
        consts.append(Fraction(0))
        normals.append(tuple(-x for x in e))
        consts.append(-as_fraction(s))
    return DelzantPolytope(tuple(normals), tuple(consts))


def simplex(d: int, size=1) -> DelzantPolytope:
    normals = [tuple(int(i == j) for j in range(d)) for i in range(d)] + [tuple([-1] * d)]
    return DelzantPolytope(tuple(normals), tuple([Fraction(0)] * d + [-as_fraction(size)]))
