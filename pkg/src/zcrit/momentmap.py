"""Zeros of a perturbed linear torus moment map.

Coordinates are flat, the unperturbed moment map is ``<mu, v_l> = |z_l|^2`` and
the perturbation is a power series in the parameter ``eps``:

    G_l(z) = |z_l|^2 + sum_j eps^j h_{l,j}(z).

Every Hamiltonian is a real polynomial in the moduli ``|z_1|, ..., |z_k|``, so
the torus action reduces the problem to positive real radii ``r_l``.  A zero
with all ``r_l > 0`` lies in the open orbit (C*)^k.

Approximate zeros are built as series in ``s = eps^(1/2)``, one half-integer
order at a time, and refined to an exact zero by Newton's method behind a
quantitative inverse-function-theorem check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from zcrit.qq import as_fraction

Exponent = tuple[int, ...]


class MomentMapError(ValueError):
    """Malformed problem data."""


class HypothesisFailure(ValueError):
    """The sign or vanishing hypotheses fail; carries the structured report."""

    def __init__(self, report: "HypothesisReport"):
        self.report = report
        super().__init__("; ".join(report.failures))


class CertificateFailure(RuntimeError):
    """The inverse-function-theorem check was inconclusive."""

    def __init__(self, message: str, certificate: "IFTCertificate | None" = None):
        self.certificate = certificate
        super().__init__(message)


@dataclass(frozen=True)
class Polynomial:
    """Real polynomial in the moduli r_1..r_k, stored as exponent tuple -> coefficient."""

    terms: tuple[tuple[Exponent, Fraction], ...]

    @classmethod
    def from_mapping(cls, data: Mapping[Sequence[int], object], dim: int) -> "Polynomial":
        acc: dict[Exponent, Fraction] = {}
        for exp, coeff in data.items():
            e = tuple(int(x) for x in exp)
            if len(e) != dim:
                raise MomentMapError(f"exponent {e} does not have length {dim}")
            if any(x < 0 for x in e):
                raise MomentMapError(f"negative exponent in {e}")
            if any(x % 2 for x in e):
                raise MomentMapError(f"odd exponent in {e}: Hamiltonians must be smooth in z")
            acc[e] = acc.get(e, Fraction(0)) + as_fraction(coeff)
        return cls(tuple(sorted((e, c) for e, c in acc.items() if c != 0)))

    @property
    def dim(self) -> int:
        return len(self.terms[0][0]) if self.terms else 0

    def constant(self) -> Fraction:
        return sum((c for e, c in self.terms if not any(e)), Fraction(0))

    def restrict_zero(self, l: int) -> "Polynomial":
        """The polynomial on the hyperplane r_l = 0."""
        return Polynomial(tuple((e, c) for e, c in self.terms if e[l] == 0))

    def __call__(self, r) -> float:
        total = 0.0
        for e, c in self.terms:
            term = float(c)
            for ri, ei in zip(r, e):
                if ei:
                    term *= ri**ei
            total += term
        return total

    def gradient(self, r) -> np.ndarray:
        g = np.zeros(len(r))
        for e, c in self.terms:
            for i, ei in enumerate(e):
                if ei == 0:
                    continue
                term = float(c) * ei * r[i] ** (ei - 1)
                for m, em in enumerate(e):
                    if m != i and em:
                        term *= r[m] ** em
                g[i] += term
        return g

    def series(self, radii: list[np.ndarray], degree: int) -> np.ndarray:
        """Compose with power series r_l(s); truncated coefficient array up to s^degree."""
        out = np.zeros(degree + 1)
        for e, c in self.terms:
            acc = np.zeros(degree + 1)
            acc[0] = float(c)
            for ri, ei in zip(radii, e):
                for _ in range(ei):
                    acc = np.convolve(acc, ri)[: degree + 1]
            out += acc
        return out


@dataclass(frozen=True)
class MomentMapProblem:
    """``hamiltonians[(l, j)]`` is h_{l,j} with 0-based coordinate l and order j >= 1."""

    dim: int
    hamiltonians: tuple[tuple[tuple[int, int], Polynomial], ...]
    eps: float = 1e-2

    def __post_init__(self):
        if self.dim < 1:
            raise MomentMapError("torus dimension must be positive")
        for (l, j), poly in self.hamiltonians:
            if not 0 <= l < self.dim:
                raise MomentMapError(f"coordinate index {l} outside 0..{self.dim - 1}")
            if j < 1:
                raise MomentMapError(f"perturbation order must be >= 1, got {j}")
            if poly.terms and poly.dim != self.dim:
                raise MomentMapError(f"h_({l},{j}) has the wrong number of variables")
        if not self.eps > 0:
            raise MomentMapError("eps must be positive")

    @classmethod
    def build(cls, dim: int, hamiltonians: Mapping[tuple[int, int], Mapping], eps: float = 1e-2):
        hs = tuple(
            sorted(((int(l), int(j)), Polynomial.from_mapping(poly, dim)) for (l, j), poly in hamiltonians.items())
        )
        return cls(dim, hs, float(eps))

    def with_eps(self, eps: float) -> "MomentMapProblem":
        return MomentMapProblem(self.dim, self.hamiltonians, float(eps))

    def orders(self, l: int) -> list[tuple[int, Polynomial]]:
        return sorted((j, p) for (ll, j), p in self.hamiltonians if ll == l)

    @property
    def max_order(self) -> int:
        return max((j for (_, j), _ in self.hamiltonians), default=0)

    def residual(self, r, eps: float | None = None) -> np.ndarray:
        e = self.eps if eps is None else eps
        r = np.asarray(r, dtype=float)
        out = r**2
        for (l, j), poly in self.hamiltonians:
            out[l] += e**j * poly(r)
        return out

    def jacobian(self, r, eps: float | None = None) -> np.ndarray:
        e = self.eps if eps is None else eps
        r = np.asarray(r, dtype=float)
        jac = np.diag(2 * r)
        for (l, j), poly in self.hamiltonians:
            jac[l] += e**j * poly.gradient(r)
        return jac


@dataclass
class HypothesisReport:
    lowest_orders: list[int | None]
    constants: list[Fraction | None]
    differential_vanishes: bool
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "lowest_orders": self.lowest_orders,
            "constants": [None if c is None else str(c) for c in self.constants],
            "differential_vanishes": self.differential_vanishes,
            "failures": list(self.failures),
        }


def check_hypotheses(prob: MomentMapProblem) -> HypothesisReport:
    """Check the vanishing and sign conditions on every coordinate hyperplane.

    On {r_l = 0} each h_{l,j} must be constant with vanishing differential: every
    monomial either is a pure constant or carries r_l to a power >= 2.  The
    lowest order with a nonzero constant gives p_l and that constant must be
    negative.
    """
    failures: list[str] = []
    orders: list[int | None] = []
    consts: list[Fraction | None] = []
    dh_ok = True
    for l in range(prob.dim):
        p_l, c_l = None, None
        for j, poly in prob.orders(l):
            for e, _ in poly.terms:
                if e[l] == 1:
                    dh_ok = False
                    failures.append(f"h_({l + 1},{j}) has a term linear in |z_{l + 1}|")
                if e[l] == 0 and any(e):
                    dh_ok = False
                    failures.append(
                        f"h_({l + 1},{j}) is not constant on z_{l + 1} = 0 (term with exponents {list(e)})"
                    )
            c = poly.restrict_zero(l).constant()
            if p_l is None and c != 0:
                p_l, c_l = j, c
        orders.append(p_l)
        consts.append(c_l)
        if c_l is None:
            failures.append(f"coordinate {l + 1}: no nonzero constant on z_{l + 1} = 0")
        elif c_l > 0:
            failures.append(f"coordinate {l + 1}: positive constant {c_l} at order {p_l}")
    return HypothesisReport(orders, consts, dh_ok, failures)


@dataclass
class ApproxSolution:
    """Radii r_l(eps) = sum_i coeffs[l][i-1] eps^((p_l + i - 1)/2)."""

    lowest_orders: list[int]
    coeffs: list[list[float]]
    order: int

    def leading(self) -> list[float]:
        return [c[0] for c in self.coeffs]

    def point(self, eps: float) -> np.ndarray:
        s = math.sqrt(eps)
        return np.array(
            [sum(c * s ** (p + i) for i, c in enumerate(cs)) for p, cs in zip(self.lowest_orders, self.coeffs)]
        )


def _series_residual(prob: MomentMapProblem, radii: list[np.ndarray], degree: int) -> list[np.ndarray]:
    out = []
    for l in range(prob.dim):
        g = np.convolve(radii[l], radii[l])[: degree + 1]
        g = np.pad(g, (0, degree + 1 - len(g)))
        for j, poly in prob.orders(l):
            shift = 2 * j
            if shift > degree:
                continue
            part = poly.series(radii, degree - shift)
            g[shift:] += part
        out.append(g)
    return out


def approximate_zero(prob: MomentMapProblem, m: int) -> ApproxSolution:
    """Series zero with residual O(eps^(m + 1/2)).

    Unknown coefficients are fixed one half-integer order at a time across all
    coordinates.  At each order the new coefficients enter the residual
    coefficients affinely, with leading diagonal 2 lambda_{l,1}; the affine
    system is solved exactly at that order.
    """
    if m < 1:
        raise MomentMapError("order m must be at least 1")
    report = check_hypotheses(prob)
    if not report.passed:
        raise HypothesisFailure(report)
    p = [int(x) for x in report.lowest_orders]
    degree = 2 * m
    radii = [np.zeros(degree + 1) for _ in range(prob.dim)]
    for l in range(prob.dim):
        lam_sq = -float(report.constants[l])
        if lam_sq <= 0:
            raise MomentMapError(f"negative value under the square root at coordinate {l + 1}")
        radii[l][p[l]] = math.sqrt(lam_sq)

    for q in range(min(2 * pl for pl in p) + 1, degree + 1):
        active = [l for l in range(prob.dim) if 2 * p[l] < q and q - p[l] <= degree]
        if not active:
            continue
        base = _series_residual(prob, radii, degree)
        rhs = np.array([base[l][q] for l in range(prob.dim)])
        cols = []
        for l in active:
            trial = [r.copy() for r in radii]
            trial[l][q - p[l]] += 1.0
            res = _series_residual(prob, trial, degree)
            cols.append(np.array([res[mm][q] for mm in range(prob.dim)]) - rhs)
        mat = np.array(cols).T
        rows = [l for l in range(prob.dim) if 2 * p[l] <= q]
        sol, *_ = np.linalg.lstsq(mat[rows], -rhs[rows], rcond=None)
        for l, val in zip(active, sol):
            radii[l][q - p[l]] = val

    final = _series_residual(prob, radii, degree)
    worst = max(float(np.max(np.abs(g))) for g in final)
    scale = max(1.0, max(float(np.max(np.abs(r))) for r in radii))
    if worst > 1e-9 * scale:
        raise MomentMapError(
            f"series residual did not vanish through order eps^{m} (max coefficient {worst:.3e}); "
            "the coupling between coordinates is not triangular for this problem"
        )
    coeffs = [list(radii[l][p[l] : degree + 1]) for l in range(prob.dim)]
    for cs in coeffs:
        while len(cs) > 1 and cs[-1] == 0.0:
            cs.pop()
    return ApproxSolution(p, coeffs, m)


@dataclass
class IFTCertificate:
    inverse_norm: float
    lipschitz_radius: float
    delta: float
    residual_at_seed: float
    samples: int
    passed: bool

    def to_dict(self) -> dict:
        return {
            "inverse_norm": self.inverse_norm,
            "lipschitz_radius": self.lipschitz_radius,
            "delta": self.delta,
            "residual_at_seed": self.residual_at_seed,
            "samples": self.samples,
            "passed": self.passed,
        }


def _ball_samples(rng: np.random.Generator, dim: int, count: int) -> np.ndarray:
    x = rng.normal(size=(count, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    radii = rng.random(count) ** (1.0 / dim)
    return x * radii[:, None]


def certify(
    prob: MomentMapProblem,
    seed_point: np.ndarray,
    samples: int = 1000,
    safety: float = 2.0,
    rng_seed: int = 0,
) -> IFTCertificate:
    """Quantitative inverse-function-theorem check around ``seed_point``.

    ``lipschitz_radius`` is the largest radius on which the sampled sup of
    ||DG(x) - DG(seed)||, times ``safety``, stays below 1 / (2 ||DG(seed)^-1||).
    """
    jac0 = prob.jacobian(seed_point)
    try:
        inv = np.linalg.inv(jac0)
    except np.linalg.LinAlgError:
        return IFTCertificate(math.inf, 0.0, 0.0, float(np.linalg.norm(prob.residual(seed_point))), 0, False)
    pnorm = float(np.linalg.norm(inv, 2))
    target = 1.0 / (2.0 * pnorm)
    unit = _ball_samples(np.random.default_rng(rng_seed), prob.dim, samples)

    def lipschitz_ok(radius: float) -> bool:
        worst = 0.0
        for u in unit:
            diff = prob.jacobian(seed_point + radius * u) - jac0
            worst = max(worst, float(np.linalg.norm(diff, 2)))
        return safety * worst <= target

    lo, hi = 0.0, float(np.linalg.norm(seed_point)) or 1.0
    while lipschitz_ok(hi) and hi < 1e6:
        lo, hi = hi, 2 * hi
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        if lipschitz_ok(mid):
            lo = mid
        else:
            hi = mid
    radius = lo
    delta = radius / (2.0 * pnorm)
    res = float(np.linalg.norm(prob.residual(seed_point)))
    return IFTCertificate(pnorm, radius, delta, res, samples, res < delta)


def newton(prob: MomentMapProblem, start, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
    r = np.array(start, dtype=float)
    for _ in range(max_iter):
        res = prob.residual(r)
        if np.linalg.norm(res) <= tol:
            return r
        r = r - np.linalg.solve(prob.jacobian(r), res)
    if np.linalg.norm(prob.residual(r)) <= tol:
        return r
    raise CertificateFailure(f"Newton did not reach {tol:g} (last residual {np.linalg.norm(prob.residual(r)):.3e})")


@dataclass
class ExactZero:
    point: np.ndarray
    certificate: IFTCertificate
    residual: float
    closeness: list[float]

    def to_dict(self) -> dict:
        return {
            "point": [float(x) for x in self.point],
            "residual": self.residual,
            "closeness_ratio": self.closeness,
            "certificate": self.certificate.to_dict(),
        }


def exact_zero(
    prob: MomentMapProblem,
    seed: ApproxSolution,
    tol: float = 1e-12,
    samples: int = 1000,
    rng_seed: int = 0,
) -> ExactZero:
    """Certified Newton refinement of an approximate zero.

    ``closeness`` holds |r_l - lambda_{l,1} eps^(p_l/2)| / eps^((p_l+1)/2) for
    each coordinate; bounded values across an eps-sweep confirm the leading
    asymptotics.
    """
    report = check_hypotheses(prob)
    if not report.passed:
        raise HypothesisFailure(report)
    start = seed.point(prob.eps)
    cert = certify(prob, start, samples=samples, rng_seed=rng_seed)
    if not cert.passed:
        raise CertificateFailure(
            f"residual {cert.residual_at_seed:.3e} is not below delta {cert.delta:.3e}; no zero is claimed",
            cert,
        )
    z = newton(prob, start, tol=tol)
    if np.linalg.norm(z - start) > cert.lipschitz_radius:
        raise CertificateFailure("Newton left the certified ball", cert)
    if np.any(z <= 0):
        raise CertificateFailure("zero has a vanishing or negative radius", cert)
    lead = seed.leading()
    closeness = [
        abs(z[l] - lead[l] * prob.eps ** (seed.lowest_orders[l] / 2)) / prob.eps ** ((seed.lowest_orders[l] + 1) / 2)
        for l in range(prob.dim)
    ]
    return ExactZero(z, cert, float(np.linalg.norm(prob.residual(z))), closeness)


def scan_zeros(
    prob: MomentMapProblem,
    lower: Sequence[float],
    upper: Sequence[float],
    points: int = 101,
    tol: float = 1e-12,
) -> list[np.ndarray]:
    """Brute-force search: Newton from every grid local minimum of |G|; distinct zeros found."""
    axes = [np.linspace(a, b, points) for a, b in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    vals = np.array([np.linalg.norm(prob.residual(p)) for p in pts]).reshape([points] * prob.dim)
    minima = []
    it = np.nditer(vals, flags=["multi_index"])
    for v in it:
        idx = it.multi_index
        neighbours = []
        for d in range(prob.dim):
            for step in (-1, 1):
                j = list(idx)
                j[d] += step
                if 0 <= j[d] < points:
                    neighbours.append(vals[tuple(j)])
        if all(v <= w for w in neighbours):
            minima.append(np.array([axes[d][idx[d]] for d in range(prob.dim)]))
    zeros: list[np.ndarray] = []
    scale = max(abs(b - a) for a, b in zip(lower, upper))
    for start in minima:
        try:
            z = newton(prob, start, tol=tol)
        except (CertificateFailure, np.linalg.LinAlgError):
            continue
        if not all(a - 1e-12 <= zi <= b + 1e-12 for zi, a, b in zip(z, lower, upper)):
            continue
        if all(np.linalg.norm(z - w) > 1e-8 * scale for w in zeros):
            zeros.append(z)
    return zeros


def residual_sweep(prob: MomentMapProblem, m: int, eps_values: Sequence[float]) -> list[tuple[float, float]]:
    """(eps, |G(r_m(eps))|_inf) for the order-m approximate zero."""
    approx = approximate_zero(prob, m)
    return [(float(e), float(np.max(np.abs(prob.residual(approx.point(e), e))))) for e in eps_values]


def loglog_slope(pairs: Sequence[tuple[float, float]]) -> float:
    x = np.log([p[0] for p in pairs])
    y = np.log([p[1] for p in pairs])
    return float(np.polyfit(x, y, 1)[0])


def problem_from_json(data: Mapping) -> MomentMapProblem:
    """``{"dim": k, "eps": e, "h": [{"l": 1, "j": 1, "terms": [{"exp": [..], "coeff": "p/q"}]}]}``; l is 1-based."""
    try:
        dim = int(data["dim"])
        hs: dict[tuple[int, int], dict] = {}
        for entry in data["h"]:
            key = (int(entry["l"]) - 1, int(entry["j"]))
            poly = hs.setdefault(key, {})
            for term in entry["terms"]:
                exp = tuple(int(x) for x in term["exp"])
                poly[exp] = as_fraction(poly.get(exp, 0)) + as_fraction(term["coeff"])
        eps = data.get("eps", 1e-2)
        eps = float(Fraction(eps)) if isinstance(eps, str) else float(eps)
    except (KeyError, TypeError) as exc:
        raise MomentMapError(f"malformed problem: {exc}") from exc
    return MomentMapProblem.build(dim, hs, eps)


def benchmark_problem(eps: float = 1e-2) -> MomentMapProblem:
    """h_{1,1} = -1 + |z_2|^4 |z_1|^2, h_{2,2} = -2 + |z_1|^2 |z_2|^2."""
    return MomentMapProblem.build(
        2,
        {(0, 1): {(0, 0): -1, (2, 4): 1}, (1, 2): {(0, 0): -2, (2, 2): 1}},
        eps,
    )
