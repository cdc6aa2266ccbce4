"""Polynomial central charges: validation, exact evaluation and phase expansions.

A charge is the datum (rho, a, Theta) and, on a polarised variety (X, L) of
dimension n, evaluates to

    Z_k = sum_l rho_l k^l  L^l . (sum_j a_j K^j) . Theta

where Theta = 1 + Theta_1 + ... + Theta_n is a polynomial in toric divisor
classes.  Only the intersection numbers ``L^l K^j Theta_p`` with l + j + p = n
enter, and these are supplied through an :class:`IntersectionTable`.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from math import comb, factorial
from typing import Iterable, Mapping, Sequence

from zcrit.qq import I, QQi, as_fraction

Monomial = tuple[int, ...]
ThetaTerms = tuple[tuple[Fraction, Monomial], ...]


class ChargeValidationError(ValueError):
    """The charge datum violates a normalisation or shape constraint."""


class ZeroChargeError(ArithmeticError):
    """Z vanishes, so the phase is undefined."""


class DegenerateChargeError(ValueError):
    """The charge lacks the structure an operation needs."""


class Classification(str, Enum):
    NON_DEGENERATE = "non_degenerate"
    MAP_TYPE = "map_type"
    ADMISSIBLE = "admissible"
    GENERAL = "general"
    UNSUPPORTED = "unsupported"


def _theta_terms(terms) -> ThetaTerms:
    out = []
    for coeff, mono in terms:
        out.append((as_fraction(coeff), tuple(sorted(int(i) for i in mono))))
    return tuple(out)


@dataclass(frozen=True)
class CentralChargeSpec:
    """Stability vector ``rho``, Chern polynomial ``chern`` and unipotent class ``theta``.

    ``theta`` maps a degree p (1 <= p <= n) to a list of ``(coefficient, monomial)``
    pairs, a monomial being a tuple of ray indices of the base fan.  The degree-0
    part is implicitly 1.  ``extra_classes`` names characteristic classes other
    than powers of K (Segre classes and the like); any entry makes the charge
    unsupported.  ``theta_pullback_ample`` is the caller's assertion that Theta is
    pulled back along a map and -Theta_1 is the pullback of an ample class.
    """

    rho: tuple[QQi, ...]
    chern: tuple[QQi, ...]
    n: int
    theta: tuple[tuple[int, ThetaTerms], ...] = ()
    extra_classes: tuple[str, ...] = ()
    theta_pullback_ample: bool = False

    def __post_init__(self):
        object.__setattr__(self, "rho", tuple(QQi.coerce(r) for r in self.rho))
        object.__setattr__(self, "chern", tuple(QQi.coerce(a) for a in self.chern))
        theta = self.theta.items() if isinstance(self.theta, Mapping) else self.theta
        norm = tuple(sorted((int(p), _theta_terms(t)) for p, t in theta))
        object.__setattr__(self, "theta", norm)
        object.__setattr__(self, "extra_classes", tuple(self.extra_classes))

    def theta_component(self, p: int) -> ThetaTerms:
        if p == 0:
            return ((Fraction(1), ()),)
        for q, terms in self.theta:
            if q == p:
                return terms
        return ()

    def theta_vanishes(self, p: int) -> bool:
        return all(c == 0 for c, _ in self.theta_component(p))

    def rho_at(self, index: int) -> QQi | None:
        """rho_index, or None when the index is out of range."""
        if 0 <= index < len(self.rho):
            return self.rho[index]
        return None


def check_well_formed(spec: CentralChargeSpec) -> None:
    n = spec.n
    if not isinstance(n, int) or n < 1:
        raise ChargeValidationError(f"dimension must be a positive integer, got {n!r}")
    if len(spec.rho) != n + 1:
        raise ChargeValidationError(f"rho has length {len(spec.rho)}, expected n+1 = {n + 1}")
    if len(spec.chern) != n + 1:
        raise ChargeValidationError(f"chern has length {len(spec.chern)}, expected n+1 = {n + 1}")
    if spec.rho[n] != I:
        raise ChargeValidationError(f"rho_n must equal i, got {spec.rho[n]}")
    if spec.chern[0] != 1 or spec.chern[1] != 1:
        raise ChargeValidationError("Chern polynomial must have a_0 = a_1 = 1")
    for p, terms in spec.theta:
        if not 1 <= p <= n:
            raise ChargeValidationError(f"theta degree {p} outside 1..{n}")
        for _, mono in terms:
            if len(mono) != p:
                raise ChargeValidationError(f"theta monomial {mono} has degree {len(mono)}, keyed under {p}")


def validate_charge(spec: CentralChargeSpec) -> Classification:
    """Classify a charge; raises :class:`ChargeValidationError` when malformed.

    The most specific label wins: unsupported, admissible, map_type,
    non_degenerate, general.  Indices below zero are vacuous conditions.
    """
    check_well_formed(spec)
    if spec.extra_classes:
        return Classification.UNSUPPORTED
    n = spec.n
    r1 = spec.rho_at(n - 1)
    negative_lead = r1 is not None and r1.re < 0
    non_degenerate = negative_lead and spec.theta_vanishes(1)
    if non_degenerate:
        r2, r3 = spec.rho_at(n - 2), spec.rho_at(n - 3)
        ok2 = r2 is None or r2.re > 0
        ok3 = r3 is None or r3.re == 0
        thetas_zero = all(spec.theta_vanishes(p) for p in (2, 3))
        if ok2 and ok3 and thetas_zero:
            return Classification.ADMISSIBLE
        return Classification.NON_DEGENERATE
    if negative_lead and spec.theta_pullback_ample:
        return Classification.MAP_TYPE
    return Classification.GENERAL


@dataclass
class IntersectionTable:
    """Exact numbers ``L^l . K^j . Theta_p`` keyed by ``(l, j, p)`` with l + j + p = n."""

    n: int
    entries: dict[tuple[int, int, int], Fraction] = field(default_factory=dict)

    def __post_init__(self):
        self.entries = {tuple(k): as_fraction(v) for k, v in self.entries.items()}
        for (l, j, p) in self.entries:
            if l + j + p != self.n or min(l, j, p) < 0:
                raise ValueError(f"table key {(l, j, p)} inconsistent with n = {self.n}")

    def get(self, l: int, j: int, p: int) -> Fraction:
        return self.entries.get((l, j, p), Fraction(0))

    def required_keys(self, spec: CentralChargeSpec) -> list[tuple[int, int, int]]:
        keys = []
        for l in range(self.n + 1):
            for p in range(self.n - l + 1):
                j = self.n - l - p
                if p and spec.theta_vanishes(p):
                    continue
                keys.append((l, j, p))
        return keys

    def require(self, spec: CentralChargeSpec) -> None:
        if spec.n != self.n:
            raise ValueError(f"table dimension {self.n} does not match charge dimension {spec.n}")
        missing = [k for k in self.required_keys(spec) if k not in self.entries]
        if missing:
            raise KeyError(f"intersection table lacks entries {missing}")

    def scaled(self, c) -> "IntersectionTable":
        """Table for the polarisation c*L."""
        c = as_fraction(c)
        return IntersectionTable(self.n, {k: v * c ** k[0] for k, v in self.entries.items()})

    def __add__(self, other: "IntersectionTable") -> "IntersectionTable":
        if other.n != self.n:
            raise ValueError("dimension mismatch")
        keys = set(self.entries) | set(other.entries)
        return IntersectionTable(self.n, {k: self.get(*k) + other.get(*k) for k in keys})


@dataclass(frozen=True)
class ChargeValue:
    z: QQi | complex
    phase: float
    k: Fraction | float


def charge_coefficients(spec: CentralChargeSpec, table: IntersectionTable) -> list[QQi]:
    """Coefficients c_l with Z_k = sum_l c_l k^l."""
    check_well_formed(spec)
    table.require(spec)
    n = spec.n
    coeffs = []
    for l in range(n + 1):
        acc = QQi(0)
        for p in range(n - l + 1):
            j = n - l - p
            if p and spec.theta_vanishes(p):
                continue
            acc = acc + spec.chern[j] * table.get(l, j, p)
        coeffs.append(spec.rho[l] * acc)
    return coeffs


def principal_phase(z: complex) -> float:
    """Argument in (-pi, pi]."""
    phase = cmath.phase(z)
    return math.pi if phase == -math.pi else phase


def evaluate_charge(spec: CentralChargeSpec, table: IntersectionTable, k) -> ChargeValue:
    """Z_k(X, L); exact for rational k, complex float for float k."""
    coeffs = charge_coefficients(spec, table)
    if isinstance(k, float):
        if k <= 0:
            raise ValueError("k must be positive")
        z = sum(complex(c) * k**l for l, c in enumerate(coeffs))
        if z == 0:
            raise ZeroChargeError("Z_k(X,L) = 0")
        return ChargeValue(z, principal_phase(z), k)
    kq = as_fraction(k)
    if kq <= 0:
        raise ValueError("k must be positive")
    z = QQi(0)
    for l, c in enumerate(coeffs):
        z = z + c * kq**l
    if not z:
        raise ZeroChargeError(f"Z_k(X,L) = 0 at k = {kq}")
    return ChargeValue(z, principal_phase(complex(z)), kq)


def phase_sweep(spec: CentralChargeSpec, table: IntersectionTable, ks: Iterable) -> list[float]:
    """Phases along a k-sweep, unwrapped continuously and anchored at pi/2 for large k.

    The returned list follows the input order.
    """
    ks = list(ks)
    values = {id_: evaluate_charge(spec, table, k) for id_, k in enumerate(ks)}
    order = sorted(range(len(ks)), key=lambda i: float(ks[i]), reverse=True)
    out: dict[int, float] = {}
    prev = None
    for i in order:
        phi = values[i].phase
        ref = math.pi / 2 if prev is None else prev
        phi += 2 * math.pi * round((ref - phi) / (2 * math.pi))
        out[i] = phi
        prev = phi
    return [out[i] for i in range(len(ks))]


def _poly_mul(a: list[QQi], b: list[QQi], order: int) -> list[QQi]:
    out = [QQi(0)] * (order + 1)
    for i, x in enumerate(a):
        if not x:
            continue
        for j, y in enumerate(b):
            if i + j > order:
                break
            out[i + j] = out[i + j] + x * y
    return out


def phase_expansion(spec: CentralChargeSpec, table: IntersectionTable, orders: int) -> list[Fraction]:
    """Exact coefficients of k^-1, ..., k^-orders in arg Z_k - pi/2.

    Writing Z_k = c_n k^n (1 + w) with w a polynomial in 1/k, the phase offset
    is Im log(1 + w) because c_n = i L^n is purely imaginary and positive.
    """
    if orders < 1:
        raise ValueError("orders must be >= 1")
    cls = validate_charge(spec)
    if cls not in (Classification.NON_DEGENERATE, Classification.ADMISSIBLE, Classification.MAP_TYPE):
        raise DegenerateChargeError(f"phase expansion needs a non-degenerate charge, got {cls.value}")
    c = charge_coefficients(spec, table)
    n = spec.n
    lead = c[n]
    if not lead or lead.re != 0 or lead.im <= 0:
        raise DegenerateChargeError("leading coefficient i L^n must be non-zero")
    w = [QQi(0)] + [c[n - m] / lead if m <= n else QQi(0) for m in range(1, orders + 1)]
    log_series = [QQi(0)] * (orders + 1)
    power = [QQi(1)] + [QQi(0)] * orders
    for r in range(1, orders + 1):
        power = _poly_mul(power, w, orders)
        sign = 1 if r % 2 else -1
        for m in range(orders + 1):
            log_series[m] = log_series[m] + power[m] * Fraction(sign, r)
    return [log_series[m].im for m in range(1, orders + 1)]


def k_stability_charge(n: int) -> CentralChargeSpec:
    """rho = (0, ..., 0, -1, i), Theta = 1: the charge whose asymptotics recover K-stability."""
    rho = [QQi(0)] * (n + 1)
    rho[n] = I
    rho[n - 1] = QQi(-1)
    chern = [QQi(1), QQi(1)] + [QQi(0)] * (n - 1)
    return CentralChargeSpec(tuple(rho), tuple(chern), n)


def dhym_products(n: int) -> list[QQi]:
    """Products rho_l a_{n-l} of the normalised exponential-type charge.

    The raw charge -e^{-ikL} e^{-K} is conjugated and multiplied by
    -n! (-i)^(3n+1), with an extra factor (-1)^(n+1) so that the top
    coefficient is i in every dimension.
    """
    out = []
    for l in range(n + 1):
        m = n - l
        out.append(QQi(comb(n, m)) * I ** (m + 1))
    return out


def dhym_charge(n: int, normalised: bool = True) -> CentralChargeSpec:
    """Exponential-type charge.

    With ``normalised`` the products rho_l a_{n-l} are those of
    :func:`dhym_products`, split with a_j = -i for j >= 2 so that the sign
    pattern of rho is visible.  Without it the raw coefficients
    -(-i)^l (-1)^(n-l) / (l!(n-l)!) are placed in rho with a_j = 1; these only
    meet the normalisation rho_n = i when n = 1.
    """
    if normalised:
        chern = [QQi(1), QQi(1)] + [QQi(0, -1)] * (n - 1)
        prods = dhym_products(n)
        rho = tuple(prods[l] / chern[n - l] for l in range(n + 1))
        return CentralChargeSpec(rho, tuple(chern), n)
    rho = []
    for l in range(n + 1):
        m = n - l
        raw = -(QQi(0, -1) ** l) * QQi((-1) ** m) / QQi(factorial(l) * factorial(m))
        rho.append(raw)
    return CentralChargeSpec(tuple(rho), tuple([QQi(1)] * (n + 1)), n)


def map_type_charge(n: int, theta1: Sequence[tuple]) -> CentralChargeSpec:
    """K-stability-type charge twisted by a degree-one class pulled back along a map."""
    base = k_stability_charge(n)
    return CentralChargeSpec(base.rho, base.chern, n, theta={1: tuple(theta1)}, theta_pullback_ample=True)
