"""JSON and CSV conventions shared by the command-line tools.

Exact rationals travel as ``"p/q"`` strings, complex rationals as four-integer
lists ``[re_num, re_den, im_num, im_den]``.  JSON output is key-sorted so that
identical inputs give identical bytes; CSV output follows RFC 4180 with a
header row and CRLF line ends.
"""

from __future__ import annotations

import csv
import io
import json
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Sequence

from zcrit.charge import CentralChargeSpec, dhym_charge, k_stability_charge, map_type_charge
from zcrit.qq import QQi, as_fraction
from zcrit.testconfig import TestConfigSpec, pl_from_json
from zcrit.toric import DelzantPolytope, box, interval, polytope_from_json


class InputError(ValueError):
    """A problem file that does not parse or does not match its schema."""


def rational_str(x) -> str:
    x = Fraction(x)
    return f"{x.numerator}/{x.denominator}"


def qqi_json(z: QQi) -> list[int]:
    return list(z.to_tuple())


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def load_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def parse_rational(text: str) -> Fraction:
    try:
        return as_fraction(text)
    except (ValueError, ZeroDivisionError, TypeError) as exc:
        raise InputError(f"not a rational number: {text!r}") from exc


def parse_k(text: str) -> list[Fraction]:
    """``"p/q"``, a comma list, or an inclusive range ``"start:stop:step"``."""
    text = text.strip()
    if not text:
        raise InputError("empty k specification")
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise InputError(f"range must be start:stop:step, got {text!r}")
        start, stop, step = (parse_rational(p) for p in parts)
        if step <= 0 or stop < start:
            raise InputError(f"range {text!r} is empty or has a non-positive step")
        out, k = [], start
        while k <= stop:
            out.append(k)
            k += step
        return out
    return [parse_rational(p) for p in text.split(",") if p.strip()]


def parse_floats(text: str) -> list[float]:
    try:
        values = [float(Fraction(p.strip())) for p in text.split(",") if p.strip()]
    except (ValueError, ZeroDivisionError) as exc:
        raise InputError(f"not a list of numbers: {text!r}") from exc
    return values


# ---------------------------------------------------------------------------
# charges


PRESETS = ("k-stability", "dhym", "map-type")


def _complex(entry) -> QQi:
    if isinstance(entry, (list, tuple)) and len(entry) == 4 and all(isinstance(v, int) for v in entry):
        if entry[1] == 0 or entry[3] == 0:
            raise InputError(f"zero denominator in {entry}")
        return QQi.from_tuple(tuple(entry))
    raise InputError(f"complex rationals are four integers [re_num, re_den, im_num, im_den], got {entry!r}")


def _theta_terms(data) -> dict[int, list]:
    theta = {}
    for key, terms in data.items():
        p = int(key)
        theta[p] = [(as_fraction(t["coeff"]), tuple(int(r) for r in t["rays"])) for t in terms]
    return theta


def charge_from_json(data: Any, n: int | None = None) -> CentralChargeSpec:
    """Explicit ``{"n", "rho", "chern", "theta"?, ...}`` or ``{"preset": name, "n"?, "theta1"?}``."""
    if not isinstance(data, dict):
        raise InputError("charge file must hold a JSON object")
    try:
        if "preset" in data:
            name = data["preset"]
            dim = int(data.get("n", n or 0))
            if dim < 1:
                raise InputError("preset charges need a dimension n")
            if name == "k-stability":
                return k_stability_charge(dim)
            if name == "dhym":
                return dhym_charge(dim)
            if name == "map-type":
                terms = _theta_terms({1: data["theta1"]})[1]
                return map_type_charge(dim, terms)
            raise InputError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
        return CentralChargeSpec(
            tuple(_complex(r) for r in data["rho"]),
            tuple(_complex(a) for a in data["chern"]),
            int(data["n"]),
            theta=_theta_terms(data.get("theta", {})),
            extra_classes=tuple(data.get("extra_classes", ())),
            theta_pullback_ample=bool(data.get("theta_pullback_ample", False)),
        )
    except InputError:
        raise
    except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
        raise InputError(f"malformed charge: {exc!r}") from exc


def charge_to_json(spec: CentralChargeSpec) -> dict:
    return {
        "n": spec.n,
        "rho": [qqi_json(r) for r in spec.rho],
        "chern": [qqi_json(a) for a in spec.chern],
        "theta": {
            str(p): [{"coeff": rational_str(c), "rays": list(m)} for c, m in terms] for p, terms in spec.theta
        },
        "extra_classes": list(spec.extra_classes),
        "theta_pullback_ample": spec.theta_pullback_ample,
    }


# ---------------------------------------------------------------------------
# geometry


def polytope_from_geometry(data: Any) -> DelzantPolytope:
    """``{"interval": [a, b]}``, ``{"box": [s1, ...]}`` or ``{"polytope": {"normals", "constants"}}``."""
    if not isinstance(data, dict):
        raise InputError("geometry must be a JSON object")
    try:
        if "interval" in data:
            a, b = (as_fraction(v) for v in data["interval"])
            return interval(a, b)
        if "box" in data:
            return box(*(as_fraction(v) for v in data["box"]))
        if "polytope" in data:
            return polytope_from_json(data["polytope"])
        if "normals" in data:
            return polytope_from_json(data)
    except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
        raise InputError(f"malformed polytope: {exc!r}") from exc
    raise InputError("geometry needs one of the keys interval, box, polytope")


def testconfig_from_json(data: Any) -> TestConfigSpec:
    """``{"base": geometry, "pieces": [{"grad": [...], "const": c}], "R": r, "twist": m}``."""
    if not isinstance(data, dict) or "base" not in data:
        raise InputError("test configuration needs a base polytope under 'base'")
    base = polytope_from_geometry(data["base"])
    try:
        f = pl_from_json(data["pieces"])
        return TestConfigSpec(
            base,
            f,
            as_fraction(data["R"]),
            as_fraction(data.get("twist", 0)),
            bool(data.get("allow_orbifold", False)),
        )
    except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
        raise InputError(f"malformed test configuration: {exc!r}") from exc
