"""Independent reference computations used by the tests.

Nothing here calls into the intersection engine: volumes and boundary
integrals come from exact polygon clipping and 1-D envelope integration.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Sequence

Piece = tuple[tuple[Fraction, ...], Fraction]


def _affine(piece: Piece, x) -> Fraction:
    grad, c = piece
    return sum((Fraction(g) * xi for g, xi in zip(grad, x)), Fraction(0)) + Fraction(c)


def pl_value(pieces: Sequence[Piece], x) -> Fraction:
    return max(_affine(p, x) for p in pieces)


def integrate_segment(pieces: Sequence[Piece], a, b) -> Fraction:
    """Exact integral of max-of-affine along the segment from a to b, w.r.t. t in [0, 1]."""
    lines = []
    for grad, c in pieces:
        slope = sum((Fraction(g) * (Fraction(bi) - Fraction(ai)) for g, ai, bi in zip(grad, a, b)), Fraction(0))
        icept = _affine((grad, c), a)
        lines.append((slope, icept))
    breaks = {Fraction(0), Fraction(1)}
    for i, (s1, c1) in enumerate(lines):
        for s2, c2 in lines[i + 1:]:
            if s1 != s2:
                t = (c2 - c1) / (s1 - s2)
                if 0 < t < 1:
                    breaks.add(t)
    pts = sorted(breaks)
    total = Fraction(0)
    for t0, t1 in zip(pts, pts[1:]):
        v0 = max(s * t0 + c for s, c in lines)
        v1 = max(s * t1 + c for s, c in lines)
        total += (v0 + v1) / 2 * (t1 - t0)
    return total


def clip(poly: list[tuple[Fraction, Fraction]], a: Sequence, b) -> list[tuple[Fraction, Fraction]]:
    """Keep the part of a convex polygon where a . x + b >= 0."""
    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        fp = a[0] * p[0] + a[1] * p[1] + b
        fq = a[0] * q[0] + a[1] * q[1] + b
        if fp >= 0:
            out.append(p)
        if (fp >= 0) != (fq >= 0):
            t = fp / (fp - fq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def polygon_area_centroid(poly) -> tuple[Fraction, tuple[Fraction, Fraction]]:
    if len(poly) < 3:
        return Fraction(0), (Fraction(0), Fraction(0))
    a = cx = cy = Fraction(0)
    for (x0, y0), (x1, y1) in zip(poly, poly[1:] + poly[:1]):
        cross = x0 * y1 - x1 * y0
        a += cross
        cx += (x0 + x1) * cross
        cy += (y0 + y1) * cross
    a /= 2
    if a == 0:
        return Fraction(0), (Fraction(0), Fraction(0))
    return a, (cx / (6 * a), cy / (6 * a))


def integrate_polygon(pieces: Sequence[Piece], poly) -> Fraction:
    """Exact integral of max-of-affine over a convex polygon."""
    total = Fraction(0)
    for i, (gi, ci) in enumerate(pieces):
        region = list(poly)
        for j, (gj, cj) in enumerate(pieces):
            if j == i:
                continue
            a = (Fraction(gi[0]) - Fraction(gj[0]), Fraction(gi[1]) - Fraction(gj[1]))
            b = Fraction(ci) - Fraction(cj)
            if j < i:
                # ties go to the lower index; strictness does not change the area
                pass
            region = clip(region, a, b)
            if len(region) < 3:
                break
        area, cen = polygon_area_centroid(region)
        if area:
            total += area * _affine((gi, ci), cen)
    return total


def boundary_df_interval(pieces: Sequence[Piece], a=0, b=1) -> Fraction:
    """int_{dP} f - (|dP| / |P|) int_P f on the interval [a, b] (boundary = two points)."""
    a, b = Fraction(a), Fraction(b)
    bdry = pl_value(pieces, (a,)) + pl_value(pieces, (b,))
    interior = integrate_segment(pieces, (a,), (b,)) * (b - a)
    return bdry - Fraction(2) / (b - a) * interior


def boundary_df_rectangle(pieces: Sequence[Piece], w=1, h=1) -> Fraction:
    """Same functional on [0, w] x [0, h]; facet measure is Euclidean length (axis normals)."""
    w, h = Fraction(w), Fraction(h)
    corners = [(Fraction(0), Fraction(0)), (w, Fraction(0)), (w, h), (Fraction(0), h)]
    bdry = Fraction(0)
    for p, q in zip(corners, corners[1:] + corners[:1]):
        length = abs(q[0] - p[0]) + abs(q[1] - p[1])
        bdry += integrate_segment(pieces, p, q) * length
    interior = integrate_polygon(pieces, corners)
    return bdry - (2 * (w + h)) / (w * h) * interior


def polygon_volume(vertices) -> Fraction:
    """Area of a convex polygon given its vertices in any order."""
    pts = [tuple(Fraction(c) for c in v) for v in vertices]
    cx = sum(p[0] for p in pts) / len(pts)
    cy = sum(p[1] for p in pts) / len(pts)
    import math

    pts.sort(key=lambda p: math.atan2(float(p[1] - cy), float(p[0] - cx)))
    area, _ = polygon_area_centroid(pts)
    return abs(area)
