"""Deligne functionals and the Z-energy on P^1, and their slopes along test configurations.

Everything is torus-invariant and written in the logarithmic coordinate
``y = log|z|^2``.  A (1,1)-form is then a density in y: the reference
Fubini-Study metric is ``Phi0'' = p (1 - p)`` with ``p = sigmoid(y)`` and total
mass 1, its Ricci form is ``2 Phi0''``, and ``i d dbar psi`` is ``psi''``.
Integrals are trapezoid sums on a uniform y grid, which converge
exponentially because every integrand decays like ``exp(-|y|)``.

The energy carries the same ``k^-n`` scaling as the pointwise operator of
:mod:`zcrit.metricsolve`, so its first variation is
``int psi_dot Im(e^{-i phase} Z~) omega^n`` with that operator.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from fractions import Fraction
from typing import Sequence

import numpy as np

from zcrit.charge import CentralChargeSpec, Classification, validate_charge
from zcrit.metricsolve import MomentumProfile, normalised_charge, theta_from_charge
from zcrit.testconfig import TestConfigSpec, phase_pairing, total_space_polytope


class EnergyError(ValueError):
    """Invalid grid, degenerate metric or a slope that does not settle."""


# ---------------------------------------------------------------------------
# grids and potentials


@dataclass(frozen=True)
class LogGrid:
    """Uniform grid in y = log|z|^2 with trapezoid weights."""

    y: np.ndarray

    @classmethod
    def symmetric(cls, half_width: float = 45.0, spacing: float = 0.02) -> "LogGrid":
        count = int(round(2 * half_width / spacing)) + 1
        return cls(np.linspace(-half_width, half_width, count))

    @property
    def weights(self) -> np.ndarray:
        h = self.y[1] - self.y[0]
        w = np.full(self.y.shape, h)
        w[0] = w[-1] = h / 2
        return w

    @property
    def sigmoid(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.y))

    @property
    def cosigmoid(self) -> np.ndarray:
        """1 - sigmoid, computed without cancellation."""
        return 1.0 / (1.0 + np.exp(self.y))

    @property
    def reference_density(self) -> np.ndarray:
        return self.sigmoid * self.cosigmoid

    def integrate(self, f: np.ndarray) -> float:
        if f.shape != self.y.shape:
            raise EnergyError(f"field of shape {f.shape} does not match the grid {self.y.shape}")
        return float(np.sum(f * self.weights))


@dataclass(frozen=True)
class Potential:
    """A torus-invariant function and its second y-derivative sampled on a grid."""

    value: np.ndarray
    second: np.ndarray

    @classmethod
    def zero(cls, grid: LogGrid) -> "Potential":
        return cls(np.zeros_like(grid.y), np.zeros_like(grid.y))

    def __add__(self, other: "Potential") -> "Potential":
        return Potential(self.value + other.value, self.second + other.second)

    def scaled(self, c: float) -> "Potential":
        return Potential(c * self.value, c * self.second)

    def shifted(self, c: float) -> "Potential":
        return Potential(self.value + c, self.second)


@dataclass(frozen=True)
class PolynomialPotential:
    """psi(y) = g(sigmoid(y)) for a polynomial g (ascending coefficients).

    Such potentials are bounded and smooth on P^1, and the metric they perturb
    has an explicit momentum profile.
    """

    coeffs: tuple[float, ...]

    def _g(self, p: np.ndarray, order: int) -> np.ndarray:
        poly = np.polynomial.Polynomial(self.coeffs)
        return poly.deriv(order)(p) if order else poly(p)

    def on_grid(self, grid: LogGrid) -> Potential:
        p, q = grid.sigmoid, grid.cosigmoid
        d1 = p * q
        d2 = d1 * (q - p)
        return Potential(self._g(p, 0), self._g(p, 2) * d1**2 + self._g(p, 1) * d2)

    def moment(self, p: np.ndarray) -> np.ndarray:
        """x = Phi'(y) as a function of p for Phi = log(1 + e^y) + psi."""
        return p + self._g(p, 1) * p * (1 - p)

    def moment_derivative(self, p: np.ndarray) -> np.ndarray:
        return 1 + self._g(p, 2) * p * (1 - p) + self._g(p, 1) * (1 - 2 * p)

    def is_valid(self, samples: int = 2001) -> bool:
        p = np.linspace(0.0, 1.0, samples)
        return bool(np.all(self.moment_derivative(p) > 0))

    def invert_moment(self, x: np.ndarray) -> np.ndarray:
        """p with moment(p) = x, by bisection (the moment map is increasing)."""
        lo = np.zeros_like(x)
        hi = np.ones_like(x)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            below = self.moment(mid) < x
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def profile(self, nodes: int = 257) -> tuple[MomentumProfile, np.ndarray]:
        """Momentum profile of omega + i d dbar psi and the parameter p at each node."""
        if not self.is_valid():
            raise EnergyError("potential does not define a Kahler metric")
        x = np.linspace(0.0, 1.0, nodes)
        p = self.invert_moment(x)
        p[0], p[-1] = 0.0, 1.0
        values = self.moment_derivative(p) * p * (1 - p)
        # anchor v'(1/2) = y(1/2) - log(1), with y = logit(p)
        pc = float(self.invert_moment(np.array([0.5]))[0])
        return MomentumProfile(values, math.log(pc / (1 - pc))), p

    def evaluate(self, p: np.ndarray) -> np.ndarray:
        return self._g(p, 0)


# ---------------------------------------------------------------------------
# Deligne functionals


def deligne_eval(
    grid: LogGrid,
    potentials: Sequence[Potential],
    references: Sequence[np.ndarray],
    theta: np.ndarray | None = None,
) -> float:
    """Deligne functional on P^1.

    With no ``theta`` this is <psi_0, psi_1> for potentials relative to the
    reference forms eta_0, eta_1:
    ``int psi_0 (eta_1 + psi_1'') + int psi_1 eta_0``.
    With a (1,1)-form ``theta`` it is <psi_0; theta> = ``int psi_0 theta``.
    """
    expected = 1 if theta is not None else 2
    if len(potentials) != expected or len(references) != expected:
        raise EnergyError(f"need {expected} potentials and reference forms, got {len(potentials)} and {len(references)}")
    for arr in [*(pt.value for pt in potentials), *references] + ([theta] if theta is not None else []):
        if np.shape(arr) != grid.y.shape:
            raise EnergyError("potentials, reference forms and theta must share the grid")
    if theta is not None:
        return grid.integrate(potentials[0].value * theta)
    (p0, p1), (e0, e1) = potentials, references
    return grid.integrate(p0.value * (e1 + p1.second)) + grid.integrate(p1.value * e0)


def ricci_potential(grid: LogGrid, psi: Potential) -> Potential:
    """lambda = log(omega^n / omega_psi^n), so that Ric(omega_psi) = Ric(omega) + i d dbar lambda.

    Only the value is needed; the second-derivative slot is left as NaN so any
    accidental use shows up.
    """
    ref = grid.reference_density
    dens = ref + psi.second
    if np.any(dens <= 0):
        raise EnergyError("omega + i d dbar psi is not positive")
    # ratio form keeps precision where both densities are tiny
    ratio = 1.0 + psi.second / ref
    return Potential(-np.log(ratio), np.full_like(ref, np.nan))


def _theta_density(grid: LogGrid, spec: CentralChargeSpec) -> np.ndarray | None:
    theta = theta_from_charge(spec, 1)
    if theta is None:
        return None
    return theta.weight * grid.reference_density


def _check(spec: CentralChargeSpec) -> None:
    if spec.n != 1:
        raise EnergyError("the energy is implemented on P^1 only")
    if validate_charge(spec) == Classification.UNSUPPORTED:
        raise EnergyError("charge involves unsupported characteristic classes")


def z_functional(grid: LogGrid, psi: Potential, spec: CentralChargeSpec, k) -> complex:
    """Complex functional F_Z(psi), scaled by k^-1."""
    _check(spec)
    ref = grid.reference_density
    kf = float(k)
    terms: dict[tuple[int, int, int], float] = {}
    # l = 1: one half of <psi, psi> against omega in both slots
    terms[(1, 0, 0)] = 0.5 * deligne_eval(grid, [psi, psi], [ref, ref])
    # j = 1: psi in the omega slot, the Ricci potential in the Ric slot
    lam = ricci_potential(grid, psi)
    terms[(0, 1, 0)] = grid.integrate(psi.value * 2 * ref) + grid.integrate(psi.second * lam.value) + grid.integrate(
        lam.value * ref
    )
    theta = _theta_density(grid, spec)
    if theta is not None:
        terms[(0, 0, 1)] = deligne_eval(grid, [psi], [ref], theta)
    total = 0j
    for (l, j, _p), val in terms.items():
        total += complex(spec.rho[l]) * kf ** (l - 1) * complex(spec.chern[j]) * (-1) ** j * val
    return total


def z_energy(grid: LogGrid, psi: Potential, spec: CentralChargeSpec, k) -> float:
    """E_Z(psi) = Im(e^{-i phase} F_Z(psi)) with the exact phase of Z_k(P^1, O(1))."""
    _check(spec)
    z = normalised_charge(spec, Fraction(k) if not isinstance(k, Fraction) else k)
    return float((np.exp(-1j * math.atan2(z.imag, z.real)) * z_functional(grid, psi, spec, k)).imag)


# ---------------------------------------------------------------------------
# test-configuration paths


@dataclass
class _Chart:
    """Affine chart q = vertex + A w at a vertex whose two facets have values w exactly."""

    vertex: np.ndarray
    A: np.ndarray
    facets: tuple[int, int]
    offsets: np.ndarray  # facet values at the vertex (zero on its own facets)
    rows: np.ndarray  # d(facet values)/dw


class _GuilleminQ:
    """Guillemin potential sum l_i log l_i of the total-space polygon of a test configuration."""

    def __init__(self, tc: TestConfigSpec):
        if tc.base.dim != 1:
            raise EnergyError("test-configuration paths are implemented over P^1")
        Q = total_space_polytope(tc).irredundant()
        self.normals = np.array(Q.normals, dtype=float)
        self.consts = np.array([float(c) for c in Q.constants])
        self.charts = []
        for v, tight in Q.vertices().items():
            i, j = tight[:2]
            M = self.normals[[i, j]]
            A = np.linalg.inv(M)
            vert = np.array([float(c) for c in v])
            offsets = self.normals @ vert - self.consts
            offsets[[i, j]] = 0.0
            self.charts.append(_Chart(vert, A, (i, j), offsets, self.normals @ A))

    def value(self, ells: np.ndarray) -> np.ndarray:
        return np.sum(ells * np.log(ells), axis=-1)

    def _pick_chart(self, ells: Sequence[float]) -> int:
        return min(range(len(self.charts)), key=lambda c: sorted(ells[f] for f in self.charts[c].facets))

    def _solve_point(self, chart: int, w: np.ndarray, target: np.ndarray) -> tuple[int, np.ndarray]:
        """Damped Newton for grad u = target in the chart's coordinates."""
        scale = 1e-13 * max(1.0, float(np.max(np.abs(target))))
        for _ in range(200):
            ch = self.charts[chart]
            ells = ch.offsets + ch.rows @ w
            ells[list(ch.facets)] = w
            resid = self.normals.T @ (np.log(ells) + 1.0) - target
            if np.max(np.abs(resid)) < scale:
                return chart, w
            jac = self.normals.T @ (ch.rows / ells[:, None])
            dw = -np.linalg.solve(jac, resid)
            change = ch.rows @ dw
            shrink = np.where(change < 0, 0.9 * ells / np.maximum(-change, 1e-300), np.inf)
            t = min(1.0, float(np.min(shrink)))
            w = w + t * dw
            ells = ch.offsets + ch.rows @ w
            ells[list(ch.facets)] = w
            best = self._pick_chart(ells)
            if best != chart:
                # reuse facet values directly: going through q cancels the tiny ones
                chart = best
                w = ells[list(self.charts[chart].facets)].copy()
        raise EnergyError(f"Legendre transform did not converge at target {tuple(target)}")

    def _facet_values(self, chart: int, w: np.ndarray) -> np.ndarray:
        ch = self.charts[chart]
        ells = ch.offsets + ch.rows @ w
        ells[list(ch.facets)] = w
        return ells

    def legendre_column(self, ys: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray]:
        """Solve grad u(q) = (y, sigma) along an increasing y grid by continuation.

        Returns the dual potential <q, target> - u(q) and the (x, x) entry of
        the inverse Hessian at each solution.
        """
        centre = int(np.argmin(np.abs(ys)))
        dual = np.empty(len(ys))
        inv00 = np.empty(len(ys))
        verts = np.array([c.vertex for c in self.charts])
        start = verts.mean(axis=0)
        chart = self._pick_chart(self.normals @ start - self.consts)
        ch = self.charts[chart]
        w0 = np.array([self.normals[f] @ start - self.consts[f] for f in ch.facets])
        # walk sigma up from 0 so every Newton solve starts close to its target
        seed = (chart, w0)
        for s in np.linspace(0.0, sigma, max(2, int(math.ceil(abs(sigma))) + 1)):
            seed = self._solve_point(*seed, np.array([ys[centre], s]))
        for order in (range(centre, len(ys)), range(centre - 1, -1, -1)):
            chart, w = seed
            for i in order:
                target = np.array([ys[i], sigma])
                chart, w = self._solve_point(chart, w, target)
                ch = self.charts[chart]
                ells = self._facet_values(chart, w)
                q = ch.vertex + ch.A @ w
                dual[i] = q @ target - float(np.sum(ells * np.log(ells)))
                hess_w = ch.rows.T @ (ch.rows / ells[:, None])
                inv_q = ch.A @ np.linalg.inv(hess_w) @ ch.A.T
                inv00[i] = inv_q[0, 0]
        return dual, inv00


def tc_potential(tc: TestConfigSpec, grid: LogGrid, tau: float) -> Potential:
    """Potential of the fibre metric over tau = -log|t|^2, relative to the round metric.

    The total space carries the Guillemin metric of its polytope; its restriction
    to a fibre has Kahler potential equal to the Legendre dual of the polytope
    potential at (y, tau), viewed as a function of y.
    """
    y = grid.y
    key = (float(y[0]), float(y[-1]), len(y))
    value, second = _fibre_potential(tc, key, float(tau))
    return Potential(value.copy(), second.copy())


@lru_cache(maxsize=128)
def _fibre_potential(tc: TestConfigSpec, grid_key: tuple[float, float, int], tau: float):
    y = np.linspace(*grid_key)
    dual, inv00 = _GuilleminQ(tc).legendre_column(y, tau)
    p, cp = 1.0 / (1.0 + np.exp(-y)), 1.0 / (1.0 + np.exp(y))
    return dual - np.logaddexp(0.0, y), inv00 - p * cp


@dataclass
class EnergyPath:
    """Samples of E_Z along the path of a test configuration."""

    tc: TestConfigSpec
    taus: list[float]
    energies: list[float]
    derivatives: list[float]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(["tau", "energy", "denergy_dtau"])
        for row in zip(self.taus, self.energies, self.derivatives):
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


@dataclass
class SlopeReport:
    numeric: float
    exact: Fraction
    discrepancy: float
    path: EnergyPath
    fit_residual: float

    def to_dict(self) -> dict:
        return {
            "numeric_slope": self.numeric,
            "exact_slope": f"{self.exact.numerator}/{self.exact.denominator}",
            "discrepancy": self.discrepancy,
            "extrapolation_change": self.fit_residual,
            "taus": list(self.path.taus),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def default_grid(tc: TestConfigSpec, tau_max: float, spacing: float = 0.05) -> LogGrid:
    """Wide enough that the fibre potentials have settled at both ends."""
    steepest = max([1.0] + [abs(float(g[0])) for g, _ in tc.f.pieces])
    return LogGrid.symmetric(steepest * tau_max + 45.0, spacing)


def energy_path(
    tc: TestConfigSpec,
    spec: CentralChargeSpec,
    k,
    taus: Sequence[float] = (12, 14, 16, 18, 20),
    step: float = 1e-2,
    grid: LogGrid | None = None,
) -> EnergyPath:
    """E_Z and its tau-derivative (central difference) at each sample."""
    if spec.n != 1 or not spec.theta_vanishes(1):
        raise EnergyError("slopes are computed for charges on P^1 with Theta = 1")
    grid = grid or default_grid(tc, max(taus) + step)
    energies, derivs = [], []
    for tau in taus:
        e_plus = z_energy(grid, tc_potential(tc, grid, tau + step), spec, k)
        e_minus = z_energy(grid, tc_potential(tc, grid, tau - step), spec, k)
        energies.append(z_energy(grid, tc_potential(tc, grid, tau), spec, k))
        derivs.append((e_plus - e_minus) / (2 * step))
    return EnergyPath(tc, [float(t) for t in taus], energies, derivs)


def aitken_limit(values: Sequence[float]) -> tuple[float, float]:
    """Limit of a sequence sampled at equal spacing, assuming one dominant exponential.

    Returns the Aitken estimate from the last three samples and its change
    against the estimate from the three before (the convergence indicator).
    """
    if len(values) < 4:
        raise EnergyError("need at least four samples to extrapolate")

    def estimate(a: float, b: float, c: float) -> float:
        d1, d2 = b - a, c - b
        denom = d2 - d1
        if abs(d2) < 1e-13 or abs(denom) < 1e-15:
            return c
        return c - d2 * d2 / denom

    last = estimate(*values[-3:])
    prev = estimate(*values[-4:-1])
    return last, abs(last - prev)


def slope_along_tc(
    tc: TestConfigSpec,
    spec: CentralChargeSpec,
    k,
    taus: Sequence[float] = (12, 14, 16, 18, 20),
    step: float = 1e-2,
    tolerance: float = 1e-2,
    grid: LogGrid | None = None,
) -> SlopeReport:
    """Asymptotic slope of E_Z along the path, divided by |k^-1 Z_k|, against Im(Z_TC / Z).

    The derivative samples must be equally spaced in tau; their limit is taken by
    Aitken extrapolation, and a limit that still moves by more than
    ``tolerance`` between the last two triples is reported as non-convergent.
    """
    gaps = np.diff(np.asarray(taus, dtype=float))
    if len(gaps) == 0 or np.ptp(gaps) > 1e-12 or gaps[0] <= 0:
        raise EnergyError("tau samples must be increasing and equally spaced")
    path = energy_path(tc, spec, k, taus, step, grid)
    limit, change = aitken_limit(path.derivatives)
    if change > tolerance * max(1.0, abs(limit)):
        raise EnergyError(f"slope extrapolation did not settle (change {change:.2e}); derivatives {path.derivatives}")
    kq = Fraction(k) if not isinstance(k, Fraction) else k
    norm = abs(normalised_charge(spec, kq))
    numeric = limit / norm
    exact = phase_pairing(tc, spec, kq)
    return SlopeReport(numeric, exact, abs(numeric - float(exact)), path, change / norm)


# ---------------------------------------------------------------------------
# variational check


@dataclass
class VariationCheck:
    finite_difference: float
    operator_pairing: float

    @property
    def relative_error(self) -> float:
        return abs(self.finite_difference - self.operator_pairing) / max(abs(self.operator_pairing), 1e-300)


def variation_check(
    base: PolynomialPotential,
    direction: PolynomialPotential,
    spec: CentralChargeSpec,
    k,
    t: float = 1e-4,
    grid: LogGrid | None = None,
    nodes: int = 257,
) -> VariationCheck:
    """d/dt E_Z(base + t direction) at t = 0 against int psi_dot Im(e^{-i phase} Z~) omega.

    The left side is a central difference of the energy quadrature in y; the
    right side evaluates the pointwise operator on the momentum profile of the
    base metric, sampled in the moment coordinate.
    """
    from zcrit.metricsolve import evaluate_ztilde

    grid = grid or LogGrid.symmetric()
    b = base.on_grid(grid)
    d = direction.on_grid(grid)
    fd = (z_energy(grid, b + d.scaled(t), spec, k) - z_energy(grid, b + d.scaled(-t), spec, k)) / (2 * t)
    profile, p = base.profile(nodes)
    pc = evaluate_ztilde(profile, spec, k)
    pairing = float(np.sum(direction.evaluate(p) * pc.rotated.imag * pc.weights))
    return VariationCheck(fd, pairing)
