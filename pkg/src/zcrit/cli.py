"""Command-line front end.

Exit codes: 0 success, 1 tool or input failure, 2 a negative mathematical
answer (an unstable verdict, failed hypotheses, an uncertified zero or a
positivity failure).  Every command prints its JSON report to stdout and, with
``--out``, also writes ``report.json`` and any CSV series into that directory.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from zcrit import __version__
from zcrit.charge import (
    ChargeValidationError,
    ZeroChargeError,
    charge_coefficients,
    evaluate_charge,
    phase_sweep,
    validate_charge,
)
from zcrit.formats import (
    InputError,
    charge_from_json,
    charge_to_json,
    csv_text,
    dumps,
    load_json,
    parse_floats,
    parse_k,
    polytope_from_geometry,
    rational_str,
    testconfig_from_json,
)
from zcrit.qq import QQi
from zcrit.toric import build_intersection_table, polytope_to_fan

EXIT_OK, EXIT_FAILURE, EXIT_NEGATIVE = 0, 1, 2


class Negative(Exception):
    """Carries a report whose mathematical answer is negative."""

    def __init__(self, report: dict, csvs: dict[str, str] | None = None):
        super().__init__(report.get("status", "negative"))
        self.report = report
        self.csvs = csvs or {}


def _threads() -> int:
    raw = os.environ.get("ZCRIT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise InputError(f"ZCRIT_THREADS must be a positive integer, got {raw!r}")


def _ordered_map(fn: Callable, items: Sequence) -> list:
    """Map over items on a bounded pool; results keep the input order."""
    workers = min(_threads(), max(1, len(items)))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _qqi(z: QQi) -> dict:
    return {"re": rational_str(z.re), "im": rational_str(z.im)}


def _need(args, name: str) -> str:
    value = getattr(args, name)
    if value is None:
        raise InputError(f"--{name.replace('_', '-')} is required for {args.command}")
    return value


def _charge(args, n: int | None = None):
    return charge_from_json(load_json(_need(args, "charge")), n)


def _float_or_nan(x: float) -> float | str:
    return x if math.isfinite(x) else repr(x)


# ---------------------------------------------------------------------------
# commands


def cmd_charge_eval(args) -> tuple[dict, dict]:
    P = polytope_from_geometry(load_json(_need(args, "geometry")))
    spec = _charge(args, P.dim)
    ks = parse_k(args.k or "1")
    fan, L = polytope_to_fan(P)
    table = build_intersection_table(fan, L, spec)
    cls = validate_charge(spec)
    coeffs = charge_coefficients(spec, table)
    phases = phase_sweep(spec, table, ks)
    rows, values = [], []
    for k, phase in zip(ks, phases):
        z = evaluate_charge(spec, table, k).z
        values.append({"k": rational_str(k), "z": _qqi(z), "phase": phase})
        rows.append([rational_str(k), rational_str(z.re), rational_str(z.im), phase])
    report = {
        "command": "charge-eval",
        "charge": charge_to_json(spec),
        "classification": cls.value,
        "coefficients": [_qqi(c) for c in coeffs],
        "intersections": {f"{l},{j},{p}": rational_str(v) for (l, j, p), v in sorted(table.entries.items())},
        "values": values,
    }
    return report, {"charge.csv": csv_text(["k", "re_z", "im_z", "phase"], rows)}


def cmd_stability_check(args) -> tuple[dict, dict]:
    from zcrit.testconfig import stability_verdict

    tc = testconfig_from_json(load_json(_need(args, "geometry")))
    spec = _charge(args, tc.base.dim)
    ks = parse_k(args.k or "1:20:1")
    verdict = stability_verdict(tc, spec, ks)
    opt = lambda x: None if x is None else rational_str(x)  # noqa: E731
    report = {
        "command": "stability-check",
        "verdict": verdict.label(),
        "kind": verdict.kind,
        "k_threshold": opt(verdict.k_threshold),
        "df": opt(verdict.df),
        "leading_coefficient": opt(verdict.leading),
        "predicted_leading_coefficient": opt(verdict.predicted_leading),
        "bridge_holds": verdict.bridge_holds,
        "values": [{"k": rational_str(k), "im_ratio": rational_str(v)} for k, v in verdict.values],
    }
    csvs = {
        "pairing.csv": csv_text(
            ["k", "im_ratio", "im_ratio_float"], [[rational_str(k), rational_str(v), float(v)] for k, v in verdict.values]
        )
    }
    if verdict.kind == "unstable_at":
        report["status"] = "unstable"
        raise Negative(report, csvs)
    report["status"] = "ok"
    return report, csvs


def cmd_df(args) -> tuple[dict, dict]:
    from zcrit.testconfig import donaldson_futaki, is_fibration

    tc = testconfig_from_json(load_json(_need(args, "geometry")))
    df, mu = donaldson_futaki(tc)
    return {
        "command": "df",
        "df": rational_str(df),
        "mu": rational_str(mu),
        "is_fibration": is_fibration(tc),
        "sign": (df > 0) - (df < 0),
    }, {}


def _initial_ansatz(P, args):
    from zcrit.metricsolve import MomentumProfile, SymplecticPotential

    if P.dim == 1:
        if tuple(P.normals) != ((1,), (-1,)) or P.constants != (0, -1):
            raise InputError("solve-metric on P^1 needs the interval [0, 1]")
        nodes = args.grid or 257
        if args.initial:
            vals = _read_column_csv(args.initial, nodes)
            return MomentumProfile(vals)
        return MomentumProfile.round(nodes)
    if P.dim == 2:
        normals = tuple(P.normals)
        if normals != ((1, 0), (-1, 0), (0, 1), (0, -1)) or P.constants[0] != 0 or P.constants[2] != 0:
            raise InputError("solve-metric on surfaces needs a box [0, a] x [0, b]")
        sides = (float(-P.constants[1]), float(-P.constants[3]))
        nodes = args.grid or 33
        if args.initial:
            vals = _read_column_csv(args.initial, nodes * nodes).reshape(nodes, nodes)
            return SymplecticPotential(vals, sides)
        return SymplecticPotential.product_round(nodes, sides)
    raise InputError("solve-metric supports P^1 and products of two intervals")


def _read_column_csv(path: str, count: int) -> np.ndarray:
    import csv

    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from exc
    if not rows:
        raise InputError(f"{path}: empty CSV")
    try:
        vals = np.array([float(r[-1]) for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise InputError(f"{path}: last column must be numeric ({exc})") from exc
    if len(vals) != count:
        raise InputError(f"{path}: expected {count} values, found {len(vals)}")
    return vals


def _solve_one(P, spec, k: Fraction, args) -> tuple[dict, object]:
    from zcrit.metricsolve import SolveOptions, residual, solve_zcritical

    start = _initial_ansatz(P, args)
    opts = SolveOptions(tol=args.tol, k_start=float(args.k_start) if args.k_start else None)
    sol, rep = solve_zcritical(start, spec, k, opts)
    res = residual(sol, spec, k)
    round_ = type(start).round(len(start.values)) if P.dim == 1 else type(start).product_round(start.shape[0], start.sides)
    entry = rep.to_dict()
    entry.update({"k": rational_str(k), "sup_distance_to_round": sol.sup_distance(round_), "integral": res.integral})
    return entry, (sol, res)


def _field_csv(P, sol, res) -> str:
    if P.dim == 1:
        x = sol.x
        return csv_text(["x", "profile", "residual"], [[float(a), float(b), float(c)] for a, b, c in zip(x, sol.values, res.field)])
    h1, h2 = sol.steps
    n1, n2 = res.field.shape
    rows = []
    for i in range(n1):
        for j in range(n2):
            rows.append([(i + 0.5) * h1, (j + 0.5) * h2, float(res.field[i, j])])
    return csv_text(["x", "y", "residual"], rows)


def cmd_solve_metric(args) -> tuple[dict, dict]:
    from zcrit.metricsolve import PositivityError

    P = polytope_from_geometry(load_json(_need(args, "geometry")))
    spec = _charge(args, P.dim)
    ks = sorted(parse_k(args.k or "50"), reverse=True)
    results, csvs = [], {}
    try:
        for k in ks:
            entry, (sol, res) = _solve_one(P, spec, k, args)
            results.append(entry)
            csvs[f"field_k{rational_str(k).replace('/', '_')}.csv"] = _field_csv(P, sol, res)
    except PositivityError as exc:
        raise Negative({"command": "solve-metric", "status": "positivity_failed", "message": str(exc), "solved": results})
    return {"command": "solve-metric", "status": "ok", "charge": charge_to_json(spec), "solutions": results}, csvs


def cmd_energy_slope(args) -> tuple[dict, dict]:
    from zcrit.energy import slope_along_tc

    tc = testconfig_from_json(load_json(_need(args, "geometry")))
    spec = _charge(args, tc.base.dim)
    ks = parse_k(args.k or "3")
    tol = args.tol if args.tol is not None else 1e-2
    reports = _ordered_map(lambda k: slope_along_tc(tc, spec, k, tolerance=tol), ks)
    out, csvs = [], {}
    for k, rep in zip(ks, reports):
        d = rep.to_dict()
        d["k"] = rational_str(k)
        out.append(d)
        csvs[f"energy_k{rational_str(k).replace('/', '_')}.csv"] = rep.path.to_csv()
    return {"command": "energy-slope", "slopes": out}, csvs


def _problem(args):
    from zcrit.momentmap import problem_from_json

    path = args.problem or args.geometry
    if path is None:
        raise InputError("--problem is required for moment-map commands")
    prob = problem_from_json(load_json(path))
    return prob


def cmd_momentmap_solve(args) -> tuple[dict, dict]:
    from zcrit.momentmap import CertificateFailure, approximate_zero, check_hypotheses, exact_zero

    prob = _problem(args)
    hyp = check_hypotheses(prob)
    report = {"command": "momentmap-solve", "eps": prob.eps, "hypotheses": hyp.to_dict()}
    if not hyp.passed:
        report["status"] = "hypothesis_failed"
        raise Negative(report)
    approx = approximate_zero(prob, args.order)
    report["approximate"] = {
        "order": approx.order,
        "lowest_orders": list(approx.lowest_orders),
        "coefficients": [[float(c) for c in cs] for cs in approx.coeffs],
        "residual": float(np.max(np.abs(prob.residual(approx.point(prob.eps))))),
    }
    try:
        z = exact_zero(prob, approx, tol=args.tol or 1e-12, rng_seed=args.seed)
    except CertificateFailure as exc:
        report["status"] = "inconclusive"
        report["message"] = str(exc)
        if exc.certificate is not None:
            report["certificate"] = exc.certificate.to_dict()
        raise Negative(report)
    report["status"] = "ok"
    report["exact"] = z.to_dict()
    return report, {}


def cmd_sweep(args) -> tuple[dict, dict]:
    if args.parameter == "k":
        from zcrit.testconfig import phase_pairing

        ks = parse_k(args.values or args.k or "")
        if not ks:
            raise InputError("empty parameter list")
        tc = testconfig_from_json(load_json(_need(args, "geometry")))
        spec = _charge(args, tc.base.dim)
        vals = _ordered_map(lambda k: phase_pairing(tc, spec, k), ks)
        rows = [[rational_str(k), rational_str(v), float(v)] for k, v in zip(ks, vals)]
        report = {"command": "sweep", "parameter": "k", "points": len(rows)}
        return report, {"sweep.csv": csv_text(["k", "im_ratio", "im_ratio_float"], rows)}
    if args.parameter == "epsilon":
        from zcrit.momentmap import approximate_zero, loglog_slope

        eps = parse_floats(args.values or "")
        if not eps:
            raise InputError("empty parameter list")
        if any(e <= 0 for e in eps):
            raise InputError("epsilon values must be positive")
        prob = _problem(args)
        approx = approximate_zero(prob, args.order)
        pairs = _ordered_map(
            lambda e: (e, float(np.max(np.abs(prob.residual(approx.point(e), e))))), eps
        )
        slope = loglog_slope(pairs) if len(pairs) > 1 and all(r > 0 for _, r in pairs) else float("nan")
        report = {"command": "sweep", "parameter": "epsilon", "order": args.order, "loglog_slope": _float_or_nan(slope)}
        return report, {"sweep.csv": csv_text(["epsilon", "residual"], pairs)}
    if args.parameter == "grid":
        grids = [int(g) for g in parse_floats(args.values or "")]
        if not grids:
            raise InputError("empty parameter list")
        if any(g < 5 for g in grids):
            raise InputError("grid sizes must be at least 5")
        P = polytope_from_geometry(load_json(_need(args, "geometry")))
        spec = _charge(args, P.dim)
        k = parse_k(args.k or "50")[0]

        def one(g):
            sub = argparse.Namespace(**{**vars(args), "grid": g})
            entry, _ = _solve_one(P, spec, k, sub)
            return entry

        entries = _ordered_map(one, grids)
        rows = [[g, e["iterations"], e["final_residual"], e["sup_distance_to_round"]] for g, e in zip(grids, entries)]
        report = {"command": "sweep", "parameter": "grid", "k": rational_str(k), "points": len(rows)}
        return report, {"sweep.csv": csv_text(["grid", "iterations", "residual", "sup_distance_to_round"], rows)}
    raise InputError(f"unknown sweep parameter {args.parameter!r}")


COMMANDS = {
    "charge-eval": cmd_charge_eval,
    "stability-check": cmd_stability_check,
    "df": cmd_df,
    "solve-metric": cmd_solve_metric,
    "energy-slope": cmd_energy_slope,
    "momentmap-solve": cmd_momentmap_solve,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--charge", help="central charge JSON file")
    common.add_argument("--geometry", help="polytope or test-configuration JSON file")
    common.add_argument("--k", help="rational, comma list, or start:stop:step")
    common.add_argument("--tol", type=float, help="tolerance (solver residual, Newton, extrapolation)")
    common.add_argument("--grid", type=int, help="nodes per side for metric ansatze")
    common.add_argument("--out", help="directory for report.json and CSV series")
    common.add_argument("--seed", type=int, default=0, help="seed for randomised estimates")

    parser = argparse.ArgumentParser(prog="zcrit", description="Z-critical metrics and stability computations")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("charge-eval", parents=[common], help="evaluate Z_k(X, L) exactly")
    sub.add_parser("stability-check", parents=[common], help="sign of Im(Z_TC/Z) over a k range")
    sub.add_parser("df", parents=[common], help="Donaldson-Futaki invariant of a test configuration")
    p = sub.add_parser("solve-metric", parents=[common], help="Newton solve for a Z-critical metric")
    p.add_argument("--initial", help="CSV of initial ansatz values (last column)")
    p.add_argument("--k-start", help="continuation start (largest k)")
    sub.add_parser("energy-slope", parents=[common], help="slope of the Z-energy along a test configuration")
    p = sub.add_parser("momentmap-solve", parents=[common], help="approximate and certified moment-map zero")
    p.add_argument("--problem", help="moment-map problem JSON file")
    p.add_argument("--order", type=int, default=3, help="order m of the approximate solution")
    p = sub.add_parser("sweep", parents=[common], help="CSV series over k, epsilon or grid size")
    p.add_argument("--parameter", choices=["k", "epsilon", "grid"], required=True)
    p.add_argument("--values", help="comma list (or k range) of parameter values")
    p.add_argument("--problem", help="moment-map problem JSON file (epsilon sweeps)")
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--initial", help=argparse.SUPPRESS)
    p.add_argument("--k-start", help=argparse.SUPPRESS)
    return parser


def _emit(report: dict, csvs: dict[str, str], out: str | None) -> None:
    text = dumps(report)
    sys.stdout.write(text)
    if out:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.json").write_text(text)
        for name, body in sorted(csvs.items()):
            with open(d / name, "w", newline="") as fh:
                fh.write(body)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("tol", "grid"):
        value = getattr(args, name, None)
        if value is not None and value <= 0:
            print(f"error: --{name} must be positive", file=sys.stderr)
            return EXIT_FAILURE
    try:
        report, csvs = COMMANDS[args.command](args)
    except Negative as neg:
        _emit(neg.report, neg.csvs, args.out)
        return EXIT_NEGATIVE
    except (InputError, ChargeValidationError, ZeroChargeError, ValueError, KeyError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    _emit(report, csvs, args.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
