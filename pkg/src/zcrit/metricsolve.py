"""The pointwise Z-critical operator on torus-invariant metrics, and a Newton solver.

Two ansatz families are supported.

* :class:`MomentumProfile` on P^1: the profile ``phi(x) = 1 / u''(x)`` sampled at
  nodes of [0, 1], vanishing at the ends with slopes +1 and -1.
* :class:`SymplecticPotential` on a rectangle (P^1 x P^1 with a product
  polarisation): ``u = u_G + v`` with ``u_G`` the Guillemin potential
  ``sum l_i log l_i`` and ``v`` sampled at grid nodes.

Every torus-invariant closed (1,1)-form is encoded by a map from the polytope to
R^n whose Jacobian is the form relative to the metric: the identity for the
metric itself, ``-b`` with ``b = div H`` (H the inverse Hessian of u) for the
Ricci form, and a pulled-back moment map for a Fubini-Study form.  Wedge
products divided by the volume form are mixed areas of cell images, so all
global integrals telescope to boundary data and come out exact up to rounding.
The Laplacian is discretised in flux form with zero boundary flux.

The operator returned by :func:`evaluate_ztilde` is scaled by ``k^-n`` so that
it is O(1) as k grows; its integral against the volume form is ``k^-n Z_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from zcrit.charge import (
    CentralChargeSpec,
    Classification,
    DegenerateChargeError,
    ZeroChargeError,
    evaluate_charge,
    validate_charge,
)
from zcrit.toric import box, build_intersection_table, interval, polytope_to_fan


class MetricError(ValueError):
    """Degenerate metric or unsupported ansatz and charge combination."""


class PositivityError(MetricError):
    """Re(e^{-i phase} Z~) is not positive at every node."""


class DivergenceError(RuntimeError):
    def __init__(self, message: str, residual_history: Sequence[float]):
        self.residual_history = list(residual_history)
        super().__init__(message)


@dataclass(frozen=True)
class PullbackTheta:
    """theta_1 = weight times the Fubini-Study form pulled back from the factor ``axis``.

    Its class is ``weight`` times the toric divisor of the ray +e_axis.
    """

    axis: int = 0
    weight: float = 1.0


def _as_fraction_k(k) -> Fraction:
    return k if isinstance(k, Fraction) else Fraction(k)


# ---------------------------------------------------------------------------
# ansatz types


@dataclass
class MomentumProfile:
    """Profile values at the nodes x_i = i / N of [0, 1].

    ``center_gradient`` is v'(1/2) where u = u_G + v; it fixes where the point
    x = 1/2 sits in the complex coordinate y = u'(x) and matters only for
    pulled-back forms.
    """

    values: np.ndarray
    center_gradient: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or len(self.values) < 5:
            raise MetricError("profile needs at least 5 nodes")

    n = 1

    @property
    def N(self) -> int:
        return len(self.values) - 1

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.N + 1)

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @classmethod
    def round(cls, nodes: int = 257) -> "MomentumProfile":
        x = np.linspace(0.0, 1.0, nodes)
        return cls(x * (1 - x))

    @classmethod
    def from_function(
        cls, f: Callable[[np.ndarray], np.ndarray], nodes: int = 257, center_gradient: float = 0.0
    ) -> "MomentumProfile":
        x = np.linspace(0.0, 1.0, nodes)
        vals = np.asarray(f(x), dtype=float)
        vals[0] = vals[-1] = 0.0
        return cls(vals, center_gradient)

    def check(self) -> None:
        if abs(self.values[0]) > 1e-14 or abs(self.values[-1]) > 1e-14:
            raise MetricError("profile must vanish at both ends")
        if np.any(self.values[1:-1] <= 0):
            i = int(np.argmin(self.values[1:-1])) + 1
            raise MetricError(f"profile is not positive at node {i} (value {self.values[i]:.3e})")

    def vector(self) -> np.ndarray:
        return self.values[1:-1].copy()

    def smoothness_rows(self) -> None:
        return None

    def with_vector(self, vec: np.ndarray) -> "MomentumProfile":
        vals = np.zeros(self.N + 1)
        vals[1:-1] = vec
        return MomentumProfile(vals, self.center_gradient)

    def sup_distance(self, other: "MomentumProfile") -> float:
        return float(np.max(np.abs(self.values - other.values)))


@dataclass
class SymplecticPotential:
    """u = u_G + v on [0, a] x [0, b]; ``v`` has shape (N1 + 1, N2 + 1), index [i, j] at (i h1, j h2)."""

    v: np.ndarray
    sides: tuple[float, float] = (1.0, 1.0)

    n = 2

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)
        if self.v.ndim != 2 or min(self.v.shape) < 5:
            raise MetricError("potential grid needs at least 5 nodes per side")
        self.sides = (float(self.sides[0]), float(self.sides[1]))

    @classmethod
    def product_round(cls, nodes: int = 33, sides=(1.0, 1.0)) -> "SymplecticPotential":
        return cls(np.zeros((nodes, nodes)), tuple(sides))

    @classmethod
    def from_function(cls, f, nodes: int = 33, sides=(1.0, 1.0)) -> "SymplecticPotential":
        x = np.linspace(0.0, sides[0], nodes)
        y = np.linspace(0.0, sides[1], nodes)
        X, Y = np.meshgrid(x, y, indexing="ij")
        return cls(np.asarray(f(X, Y), dtype=float), tuple(sides))

    @property
    def shape(self) -> tuple[int, int]:
        return self.v.shape

    @property
    def steps(self) -> tuple[float, float]:
        return self.sides[0] / (self.v.shape[0] - 1), self.sides[1] / (self.v.shape[1] - 1)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.linspace(0.0, self.sides[0], self.v.shape[0])
        y = np.linspace(0.0, self.sides[1], self.v.shape[1])
        return np.meshgrid(x, y, indexing="ij")

    def vector(self) -> np.ndarray:
        return self.v.ravel().copy()

    def smoothness_rows(self) -> np.ndarray:
        """Fourth differences normal to each edge, one row per boundary node."""
        n1, n2 = self.v.shape
        stencil = (1.0, -4.0, 6.0, -4.0, 1.0)
        rows = []
        for j in range(n2):
            for start, sign in ((0, 1), (n1 - 1, -1)):
                row = np.zeros((n1, n2))
                for t, c in enumerate(stencil):
                    row[start + sign * t, j] += c
                rows.append(row.ravel())
        for i in range(n1):
            for start, sign in ((0, 1), (n2 - 1, -1)):
                row = np.zeros((n1, n2))
                for t, c in enumerate(stencil):
                    row[i, start + sign * t] += c
                rows.append(row.ravel())
        return np.array(rows)

    def with_vector(self, vec: np.ndarray) -> "SymplecticPotential":
        return SymplecticPotential(vec.reshape(self.v.shape), self.sides)

    def sup_distance(self, other: "SymplecticPotential") -> float:
        """Sup over nodes of the difference of inverse Hessians (the metric tensors)."""
        return float(np.max(np.abs(_inverse_hessian(self) - _inverse_hessian(other))))


# ---------------------------------------------------------------------------
# finite differences


def _d1(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    return np.gradient(f, h, axis=axis, edge_order=2)


def _d2(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    f = np.moveaxis(f, axis, 0)
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / h**2
    out[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / h**2
    out[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / h**2
    return np.moveaxis(out, 0, axis)


def _inverse_hessian(pot: SymplecticPotential) -> np.ndarray:
    """H = (Hess u)^-1 at every node, shape (2, 2, N1+1, N2+1); finite on the boundary."""
    h1, h2 = pot.steps
    a, b = pot.sides
    X, Y = pot.mesh()
    g1 = X * (a - X) / a
    g2 = Y * (b - Y) / b
    v11 = _d2(pot.v, h1, 0)
    v22 = _d2(pot.v, h2, 1)
    v12 = _d1(_d1(pot.v, h1, 0), h2, 1)
    # H = H_G (I + V H_G)^-1 with H_G = diag(g1, g2)
    m11 = 1 + v11 * g1
    m12 = v12 * g2
    m21 = v12 * g1
    m22 = 1 + v22 * g2
    det = m11 * m22 - m12 * m21
    if np.any(det <= 0):
        raise MetricError("Hessian of the symplectic potential is not positive definite")
    i11, i12, i21, i22 = m22 / det, -m12 / det, -m21 / det, m11 / det
    H = np.array([[g1 * i11, g1 * i12], [g2 * i21, g2 * i22]])
    H = 0.5 * (H + H.transpose(1, 0, 2, 3))
    interior = H[:, :, 1:-1, 1:-1]
    d = interior[0, 0] * interior[1, 1] - interior[0, 1] ** 2
    if np.any(interior[0, 0] <= 0) or np.any(d <= 0):
        raise MetricError("metric is not positive definite at an interior node")
    return H


# ---------------------------------------------------------------------------
# form fields and densities


@dataclass
class _Fields:
    """Node fields whose Jacobians are the relative matrices of omega, Ric and theta_1."""

    omega: np.ndarray
    ricci: np.ndarray
    theta: np.ndarray | None
    H: np.ndarray | None = None


def _profile_fields(prof: MomentumProfile, theta: PullbackTheta | None) -> _Fields:
    x = prof.x
    c = None
    if theta is not None:
        if theta.axis != 0:
            raise MetricError("P^1 has a single factor (axis 0)")
        # v'' = 1/phi - 1/(x(1-x)), integrated from the anchor v'(1/2)
        phi = prof.values
        extra = np.zeros_like(x)
        extra[1:-1] = 1.0 / phi[1:-1] - 1.0 / (x[1:-1] * (1 - x[1:-1]))
        extra[0] = 2 * extra[1] - extra[2]
        extra[-1] = 2 * extra[-2] - extra[-3]
        vprime = np.concatenate([[0.0], np.cumsum(0.5 * (extra[1:] + extra[:-1]) * prof.h)])
        vprime += prof.center_gradient - np.interp(0.5, x, vprime)
        E = np.exp(vprime)
        c = theta.weight * x * E / (x * E + (1 - x))
    return _Fields(x, None, c)


def _potential_fields(pot: SymplecticPotential, theta: PullbackTheta | None) -> _Fields:
    h1, h2 = pot.steps
    a, b = pot.sides
    H = _inverse_hessian(pot)
    b1 = _d1(H[0, 0], h1, 0) + _d1(H[0, 1], h2, 1)
    b2 = _d1(H[1, 0], h1, 0) + _d1(H[1, 1], h2, 1)
    # <b, u_i> = 1 on the facet with inward normal u_i
    b1[0, :], b1[-1, :] = 1.0, -1.0
    b2[:, 0], b2[:, -1] = 1.0, -1.0
    X, Y = pot.mesh()
    omega = np.array([X, Y])
    ricci = -np.array([b1, b2])
    c = None
    if theta is not None:
        if theta.axis not in (0, 1):
            raise MetricError("axis must be 0 or 1 on a rectangle")
        ax = theta.axis
        side = pot.sides[ax]
        coord = X if ax == 0 else Y
        dv = _d1(pot.v, pot.steps[ax], ax)
        E = np.exp(dv)
        frac = coord * E / (coord * E + (side - coord))
        comp = theta.weight * frac
        zero = np.zeros_like(comp)
        c = np.array([comp, zero]) if ax == 0 else np.array([zero, comp])
    return _Fields(omega, ricci, c, H)


def _shoelace(F: np.ndarray) -> np.ndarray:
    """Signed area of the image of each grid cell under the node map F (shape (2, N1+1, N2+1))."""
    x, y = F
    p = [(x[:-1, :-1], y[:-1, :-1]), (x[1:, :-1], y[1:, :-1]), (x[1:, 1:], y[1:, 1:]), (x[:-1, 1:], y[:-1, 1:])]
    total = 0.0
    for (xa, ya), (xb, yb) in zip(p, p[1:] + p[:1]):
        total = total + xa * yb - xb * ya
    return 0.5 * total


def _mixed_density_2d(F: np.ndarray, G: np.ndarray, cell_area: float) -> np.ndarray:
    return (_shoelace(F + G) - _shoelace(F) - _shoelace(G)) / (2.0 * cell_area)


def _laplacian_cells(g: np.ndarray, H: np.ndarray, h1: float, h2: float) -> np.ndarray:
    """Flux-form div(H grad g) for a cell-centred field; no flux through the boundary."""
    # H on interior cell faces: average of the face's two end nodes
    Hx = 0.5 * (H[:, :, 1:-1, :-1] + H[:, :, 1:-1, 1:])
    Hy = 0.5 * (H[:, :, :-1, 1:-1] + H[:, :, 1:, 1:-1])
    gx = np.gradient(g, h1, axis=0, edge_order=1)
    gy = np.gradient(g, h2, axis=1, edge_order=1)

    # faces normal to x between cells (i-1, j) and (i, j)
    dn = (g[1:, :] - g[:-1, :]) / h1
    dt = 0.5 * (gy[1:, :] + gy[:-1, :])
    flux_x = (Hx[0, 0] * dn + Hx[0, 1] * dt) * h2
    # faces normal to y
    dn = (g[:, 1:] - g[:, :-1]) / h2
    dt = 0.5 * (gx[:, 1:] + gx[:, :-1])
    flux_y = (Hy[1, 1] * dn + Hy[1, 0] * dt) * h1

    div = np.zeros_like(g)
    div[:-1, :] += flux_x
    div[1:, :] -= flux_x
    div[:, :-1] += flux_y
    div[:, 1:] -= flux_y
    return div / (h1 * h2)


# ---------------------------------------------------------------------------
# the operator


@dataclass
class PointwiseCharge:
    """Z~ at every sample point with its ingredients.

    ``weights`` are the volume-form weights (n! times the Euclidean measure), so
    ``sum(z * weights)`` approximates ``k^-n Z_k``.
    """

    z: np.ndarray
    weights: np.ndarray
    phase: float
    reference_charge: complex
    scalar_curvature: np.ndarray
    ricci_eigenvalues: np.ndarray
    sigma: dict[int, np.ndarray]
    laplacian_terms: dict[tuple[int, int, int], np.ndarray]
    theta_trace: np.ndarray | None

    @property
    def rotated(self) -> np.ndarray:
        return np.exp(-1j * self.phase) * self.z

    @property
    def positivity_min(self) -> float:
        return float(np.min(self.rotated.real))

    @property
    def positive(self) -> bool:
        return self.positivity_min > 0

    def integral(self) -> complex:
        return complex(np.sum(self.z * self.weights))


def _geometry_table(ansatz, spec: CentralChargeSpec):
    if isinstance(ansatz, MomentumProfile):
        P = interval(0, 1)
    else:
        P = box(*(Fraction(s).limit_denominator(10**6) for s in ansatz.sides))
    fan, L = polytope_to_fan(P)
    return build_intersection_table(fan, L, spec)


def exact_reference_charge(ansatz, spec: CentralChargeSpec, k) -> complex:
    """k^-n Z_k from exact intersection numbers of the ansatz's toric variety."""
    key = None if isinstance(ansatz, MomentumProfile) else ansatz.sides
    return normalised_charge(spec, _as_fraction_k(k), key)


@lru_cache(maxsize=256)
def normalised_charge(spec: CentralChargeSpec, k: Fraction, sides: tuple[float, ...] | None = None) -> complex:
    """k^-n Z_k of P^1 (``sides`` None) or of the rectangle with the given sides."""
    if sides is None:
        P = interval(0, 1)
    else:
        P = box(*(Fraction(s).limit_denominator(10**6) for s in sides))
    fan, L = polytope_to_fan(P)
    val = evaluate_charge(spec, build_intersection_table(fan, L, spec), k)
    return complex(val.z) / float(k) ** spec.n


def theta_from_charge(spec: CentralChargeSpec, n: int) -> PullbackTheta | None:
    """Read a pulled-back representative off the degree-one part of Theta.

    Rays come in the order +e_1, -e_1, +e_2, ... so ray r lies on axis r // 2;
    both rays of an axis carry the same class.  Only one axis may appear.
    """
    if spec.theta_vanishes(1):
        return None
    weights: dict[int, float] = {}
    for coeff, mono in spec.theta_component(1):
        axis = mono[0] // 2
        if axis >= n:
            raise MetricError(f"theta_1 uses ray {mono[0]}, which the ansatz does not have")
        weights[axis] = weights.get(axis, 0.0) + float(coeff)
    weights = {a: w for a, w in weights.items() if w != 0}
    if len(weights) != 1:
        raise MetricError("theta_1 must be a multiple of a single factor's hyperplane class")
    (axis, weight), = weights.items()
    return PullbackTheta(axis, weight)


def _resolve_theta(spec: CentralChargeSpec, theta: PullbackTheta | None, n: int) -> PullbackTheta | None:
    if spec.n != n:
        raise MetricError(f"charge has dimension {spec.n}, ansatz has dimension {n}")
    cls = validate_charge(spec)
    if cls not in (Classification.NON_DEGENERATE, Classification.ADMISSIBLE, Classification.MAP_TYPE):
        raise MetricError(f"charge classified as {cls.value}; the operator needs a non-degenerate or map-type charge")
    for p in range(2, n + 1):
        if not spec.theta_vanishes(p):
            raise MetricError(f"theta_{p} representatives are not supported by the ansatz")
    derived = theta_from_charge(spec, n)
    if theta is None:
        return derived
    if derived is None or derived.axis != theta.axis or abs(derived.weight - theta.weight) > 1e-12:
        raise MetricError("theta representative does not match the charge's theta_1 class")
    return theta


def _profile_densities(prof: MomentumProfile, theta: PullbackTheta | None):
    """Node densities for n = 1 with trapezoid weights; sums telescope exactly."""
    phi = prof.values
    h = prof.h
    N = prof.N
    r = np.empty(N + 1)
    r[1:-1] = -(phi[2:] - 2 * phi[1:-1] + phi[:-2]) / h**2
    # ghost nodes from the boundary slopes +1 at x = 0 and -1 at x = 1
    r[0] = -2 * (phi[1] - phi[0] - h) / h**2
    r[-1] = -2 * (phi[-2] - phi[-1] - h) / h**2
    w = np.full(N + 1, h)
    w[0] = w[-1] = h / 2
    t = None
    if theta is not None:
        c = _profile_fields(prof, theta).theta
        t = np.empty(N + 1)
        t[1:-1] = (c[2:] - c[:-2]) / (2 * h)
        t[0] = (c[1] - c[0]) / h
        t[-1] = (c[-1] - c[-2]) / h
    return r, t, w


def evaluate_ztilde(ansatz, spec: CentralChargeSpec, k, theta: PullbackTheta | None = None) -> PointwiseCharge:
    """Pointwise Z~ (scaled by k^-n) for a momentum profile or symplectic potential."""
    n = ansatz.n
    theta = _resolve_theta(spec, theta, n)
    kf = float(k)
    if kf <= 0:
        raise MetricError("k must be positive")
    ref = exact_reference_charge(ansatz, spec, k)
    if ref == 0:
        raise ZeroChargeError("Z vanishes; the phase is undefined")
    phase = math.atan2(ref.imag, ref.real)
    rho = [complex(r) for r in spec.rho]
    a = [complex(x) for x in spec.chern]

    if n == 1:
        ansatz.check()
        r, t, w = _profile_densities(ansatz, theta)
        mix = {(1, 0, 0): np.ones_like(r), (0, 1, 0): r}
        if t is not None:
            mix[(0, 0, 1)] = t
        z = np.zeros_like(r, dtype=complex)
        for (l, j, p), dens in mix.items():
            z += rho[l] * kf ** (l - n) * a[j] * (-1) ** j * dens
        return PointwiseCharge(
            z=z,
            weights=w,
            phase=phase,
            reference_charge=ref,
            scalar_curvature=r,
            ricci_eigenvalues=r[:, None],
            sigma={0: np.ones_like(r), 1: r},
            laplacian_terms={},
            theta_trace=t,
        )

    fields = _potential_fields(ansatz, theta)
    h1, h2 = ansatz.steps
    area = h1 * h2
    X, B, C = fields.omega, fields.ricci, fields.theta
    slot = {"x": X, "r": B, "c": C}

    cache: dict[tuple[str, str], np.ndarray] = {}

    def mix(names: Sequence[str]) -> np.ndarray:
        key = tuple(sorted(names))
        if key not in cache:
            cache[key] = _mixed_density_2d(slot[key[0]], slot[key[1]], area)
        return cache[key]

    z = np.zeros((ansatz.shape[0] - 1, ansatz.shape[1] - 1), dtype=complex)
    lap_terms = {}
    for l in range(n + 1):
        for p in range(n - l + 1):
            j = n - l - p
            if p and C is None:
                continue
            names = ["x"] * l + ["r"] * j + ["c"] * p
            term = mix(names).copy()
            if j > 0:
                inner = ["x"] * (l + 1) + ["r"] * (j - 1) + ["c"] * p
                lap = _laplacian_cells(mix(inner), fields.H, h1, h2)
                lap_terms[(l, j, p)] = lap
                term = term - (j / (l + 1)) * lap
            z += rho[l] * kf ** (l - n) * a[j] * (-1) ** j * term

    trace = 2 * mix(["x", "r"])
    det = mix(["r", "r"])
    disc = np.sqrt(np.maximum(trace**2 / 4 - det, 0.0))
    eig = np.stack([trace / 2 - disc, trace / 2 + disc], axis=-1)
    theta_trace = 2 * mix(["x", "c"]) if C is not None else None
    return PointwiseCharge(
        z=z,
        weights=np.full(z.shape, 2.0 * area),
        phase=phase,
        reference_charge=ref,
        scalar_curvature=trace,
        ricci_eigenvalues=eig,
        sigma={0: np.ones_like(trace), 1: trace, 2: det},
        laplacian_terms=lap_terms,
        theta_trace=theta_trace,
    )


@dataclass
class Residual:
    field: np.ndarray
    norm: float
    positivity_min: float
    integral: float

    @property
    def positive(self) -> bool:
        return self.positivity_min > 0


def residual(ansatz, spec: CentralChargeSpec, k, theta: PullbackTheta | None = None) -> Residual:
    """Im(e^{-i phase} Z~) with its discrete L2 norm and the positivity margin."""
    pc = evaluate_ztilde(ansatz, spec, k, theta)
    rot = pc.rotated
    f = rot.imag
    return Residual(
        field=f,
        norm=float(np.sqrt(np.sum(f**2 * pc.weights))),
        positivity_min=float(np.min(rot.real)),
        integral=float(np.sum(f * pc.weights)),
    )


# ---------------------------------------------------------------------------
# solver


@dataclass
class SolveOptions:
    tol: float | None = None
    max_iter: int = 20
    k_start: float | None = None
    continuation_factor: float = 2.0
    fd_step: float = 1e-7


@dataclass
class SolveReport:
    iterations: int
    residual_history: list[float]
    positivity_min: float
    k_path: list[float]
    final_residual: float

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual_history": [float(x) for x in self.residual_history],
            "positivity_min": float(self.positivity_min),
            "k_path": [float(x) for x in self.k_path],
            "final_residual": float(self.final_residual),
        }


def _residual_vector(ansatz, spec, k, theta) -> np.ndarray:
    return residual(ansatz, spec, k, theta).field.ravel()


def _gate(res: Residual, k) -> None:
    if not res.positive:
        raise PositivityError(
            f"Re(e^(-i phase) Z~) has minimum {res.positivity_min:.3e} <= 0 at k = {float(k):g}"
        )


def _jacobian(ansatz, spec, k, theta, f0: np.ndarray, fd_step: float) -> np.ndarray:
    x0 = ansatz.vector()
    jac = np.empty((f0.size, x0.size))
    for col in range(x0.size):
        step = fd_step * max(1.0, abs(x0[col]))
        xp = x0.copy()
        xp[col] += step
        jac[:, col] = (_residual_vector(ansatz.with_vector(xp), spec, k, theta) - f0) / step
    return jac


def _newton(ansatz, spec, k, theta, opts: SolveOptions, tol: float, history: list[float]):
    """Damped Newton; each iteration costs one finite-difference Jacobian.

    The discrete system for a symplectic potential is underdetermined (more
    nodes than cells), and the null directions include non-smooth modes living
    on boundary rows.  The step is taken as the minimum-norm solution plus the
    null-space correction that keeps v smooth across the boundary.
    """
    res = residual(ansatz, spec, k, theta)
    _gate(res, k)
    history.append(res.norm)
    iters = 0
    smooth = ansatz.smoothness_rows()
    while res.norm > tol:
        if iters >= opts.max_iter:
            raise DivergenceError(
                f"Newton did not reach {tol:g} in {opts.max_iter} iterations at k = {float(k):g} "
                f"(last residual {res.norm:.3e})",
                history,
            )
        x0 = ansatz.vector()
        f0 = res.field.ravel()
        U, sv, Vt = np.linalg.svd(_jacobian(ansatz, spec, k, theta, f0, opts.fd_step))
        rank = int(np.sum(sv > sv[0] * 1e-12))
        delta = -Vt[:rank].T @ ((U[:, :rank].T @ f0) / sv[:rank])
        if smooth is not None and rank < x0.size:
            null = Vt[rank:].T
            z, *_ = np.linalg.lstsq(smooth @ null, -(smooth @ (x0 + delta)), rcond=None)
            delta = delta + null @ z
        t = 1.0
        accepted = False
        while t > 1e-3:
            try:
                trial = ansatz.with_vector(x0 + t * delta)
                tres = residual(trial, spec, k, theta)
            except MetricError:
                tres = None
            if tres is not None and tres.norm < res.norm:
                ansatz, res, accepted = trial, tres, True
                break
            t /= 2
        iters += 1
        if not accepted:
            raise DivergenceError(
                f"no damped step reduced the residual at k = {float(k):g} (residual {res.norm:.3e})", history
            )
        _gate(res, k)
        history.append(res.norm)
    return ansatz, res, iters


def solve_zcritical(ansatz0, spec: CentralChargeSpec, k, opts: SolveOptions | None = None, theta=None):
    """Damped Newton with continuation in k from ``k_start`` down to ``k``.

    Returns ``(ansatz, report)``.  Raises :class:`DivergenceError` when a step
    needs more than ``max_iter`` iterations and :class:`PositivityError` when the
    positivity condition fails at an iterate.
    """
    opts = opts or SolveOptions()
    cls = validate_charge(spec)
    if cls not in (Classification.ADMISSIBLE, Classification.NON_DEGENERATE, Classification.MAP_TYPE):
        raise MetricError(f"charge classified as {cls.value}; the solver needs an admissible charge")
    tol = opts.tol if opts.tol is not None else (1e-9 if ansatz0.n == 1 else 1e-7)
    kf = float(k)
    ks = [kf]
    if opts.k_start is not None and opts.k_start > kf:
        ks = []
        kk = float(opts.k_start)
        while kk > kf * (1 + 1e-12):
            ks.append(kk)
            kk /= opts.continuation_factor
        ks.append(kf)
    history: list[float] = []
    total = 0
    ansatz = ansatz0
    res = None
    for kk in ks:
        kval = Fraction(kk).limit_denominator(10**6)
        ansatz, res, its = _newton(ansatz, spec, kval, theta, opts, tol, history)
        total += its
    return ansatz, SolveReport(total, history, res.positivity_min, ks, res.norm)


# ---------------------------------------------------------------------------
# large-volume expansion


@dataclass
class LargeVolumeReport:
    fitted: np.ndarray
    predicted: np.ndarray
    max_relative_deviation: float
    max_abs_deviation: float


def predicted_leading_coefficient(ansatz, spec: CentralChargeSpec, theta: PullbackTheta | None = None) -> np.ndarray:
    """Re(rho_{n-1}) / n * (S - Lambda theta_1 - n mu_Theta1) on the sample points.

    The average of ``S - Lambda theta_1`` is n mu_Theta1 exactly, so the field is
    computed as deviation from its own weighted mean.
    """
    pc = evaluate_ztilde(ansatz, spec, 1, theta)
    field_ = pc.scalar_curvature.copy()
    if pc.theta_trace is not None:
        field_ = field_ - pc.theta_trace
    table = _geometry_table(ansatz, spec)
    n = spec.n
    vol = table.get(n, 0, 0)
    minus_k = -table.get(n - 1, 1, 0)
    theta_term = table.get(n - 1, 0, 1)
    mu_theta = (minus_k - theta_term) / vol
    return float(spec.rho[n - 1].re) / n * (field_ - n * float(mu_theta))


def large_volume_check(
    ansatz, spec: CentralChargeSpec, k_list: Sequence[float], theta: PullbackTheta | None = None, terms: int = 3
) -> LargeVolumeReport:
    """Fit the residual field as sum_{m=1..terms} c_m k^-m and compare c_1 with the prediction."""
    ks = [float(k) for k in k_list]
    if len(ks) < terms or len(set(ks)) < terms:
        raise MetricError(f"need at least {terms} distinct k values to fit {terms} terms")
    cls = validate_charge(spec)
    if cls not in (Classification.NON_DEGENERATE, Classification.ADMISSIBLE, Classification.MAP_TYPE):
        raise DegenerateChargeError(f"charge classified as {cls.value}")
    rows = np.array([[k ** (-m) for m in range(1, terms + 1)] for k in ks])
    if np.linalg.cond(rows) > 1e12:
        raise MetricError("fit is ill-conditioned for this k list")
    data = np.array([residual(ansatz, spec, Fraction(k), theta).field.ravel() for k in ks])
    coef, *_ = np.linalg.lstsq(rows, data, rcond=None)
    fitted = coef[0].reshape(residual(ansatz, spec, Fraction(ks[0]), theta).field.shape)
    predicted = predicted_leading_coefficient(ansatz, spec, theta)
    dev = np.abs(fitted - predicted)
    scale = max(float(np.max(np.abs(predicted))), 1e-12)
    return LargeVolumeReport(fitted, predicted, float(np.max(dev)) / scale, float(np.max(dev)))
