"""Exact Gaussian rationals built on :class:`fractions.Fraction`."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Union

Scalar = Union[int, Fraction, "QQi"]


def as_fraction(value) -> Fraction:
    """Coerce ints, Fractions and ``"p/q"`` strings to a Fraction (floats are refused)."""
    if isinstance(value, bool):
        raise TypeError("booleans are not rationals")
    if isinstance(value, (int, Fraction, Rational)):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"expected an exact rational, got {type(value).__name__}")


@dataclass(frozen=True)
class QQi:
    """Complex number re + i*im with rational parts."""

    re: Fraction = Fraction(0)
    im: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "re", as_fraction(self.re))
        object.__setattr__(self, "im", as_fraction(self.im))

    @classmethod
    def coerce(cls, value) -> "QQi":
        if isinstance(value, QQi):
            return value
        if isinstance(value, complex):
            raise TypeError("complex floats are not exact")
        return cls(as_fraction(value), Fraction(0))

    @classmethod
    def from_tuple(cls, t) -> "QQi":
        """Build from the four-integer form (re_num, re_den, im_num, im_den)."""
        if len(t) != 4:
            raise ValueError(f"complex rational needs four integers, got {len(t)}")
        rn, rd, iN, idn = (int(v) for v in t)
        if rd == 0 or idn == 0:
            raise ValueError("zero denominator in complex rational")
        return cls(Fraction(rn, rd), Fraction(iN, idn))

    def to_tuple(self) -> tuple[int, int, int, int]:
        return (self.re.numerator, self.re.denominator, self.im.numerator, self.im.denominator)

    def conjugate(self) -> "QQi":
        return QQi(self.re, -self.im)

    def abs2(self) -> Fraction:
        return self.re * self.re + self.im * self.im

    def __complex__(self) -> complex:
        return complex(float(self.re), float(self.im))

    def __bool__(self) -> bool:
        return bool(self.re) or bool(self.im)

    def __neg__(self) -> "QQi":
        return QQi(-self.re, -self.im)

    def __add__(self, other) -> "QQi":
        try:
            o = QQi.coerce(other)
        except TypeError:
            return NotImplemented
        return QQi(self.re + o.re, self.im + o.im)

    __radd__ = __add__

    def __sub__(self, other) -> "QQi":
        try:
            o = QQi.coerce(other)
        except TypeError:
            return NotImplemented
        return QQi(self.re - o.re, self.im - o.im)

    def __rsub__(self, other) -> "QQi":
        return QQi.coerce(other) - self

    def __mul__(self, other) -> "QQi":
        try:
            o = QQi.coerce(other)
        except TypeError:
            return NotImplemented
        return QQi(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "QQi":
        try:
            o = QQi.coerce(other)
        except TypeError:
            return NotImplemented
        d = o.abs2()
        if d == 0:
            raise ZeroDivisionError("division by zero complex rational")
        num = self * o.conjugate()
        return QQi(num.re / d, num.im / d)

    def __rtruediv__(self, other) -> "QQi":
        return QQi.coerce(other) / self

    def __pow__(self, power: int) -> "QQi":
        if not isinstance(power, int):
            return NotImplemented
        if power < 0:
            return QQi(1) / (self ** (-power))
        result, base = QQi(1), self
        while power:
            if power & 1:
                result = result * base
            base = base * base
            power >>= 1
        return result

    def __eq__(self, other) -> bool:
        try:
            o = QQi.coerce(other)
        except TypeError:
            return NotImplemented
        return self.re == o.re and self.im == o.im

    def __hash__(self) -> int:
        return hash((self.re, self.im))

    def __repr__(self) -> str:
        return f"QQi({self.re}, {self.im})"

    def __str__(self) -> str:
        if self.im == 0:
            return str(self.re)
        sign = "+" if self.im >= 0 else "-"
        return f"{self.re}{sign}{abs(self.im)}i"


I = QQi(0, 1)
