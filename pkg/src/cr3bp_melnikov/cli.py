"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 numeric failure, 3 verdict false.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
import warnings

import numpy as np

from . import audit, delaunay, dynamics, kepler, melnikov
from .dynamics import SCHEMA
from .errors import ConvergenceError, DomainError, SingularityError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VERDICT = 0, 1, 2, 3
DEFAULT_PAIRS = "1,1 1,2 2,1 2,3 3,2"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def _pairs(text):
    out = []
    for item in text.split():
        a, b = item.split(",")
        out.append((int(a), int(b)))
    return out


def _torus(args):
    if not 0.0 < args.e < 1.0:
        raise UsageError(f"e must lie in (0, 1), got {args.e}")
    if math.gcd(args.k1, args.k2) != 1 or args.k1 <= 0 or args.k2 <= 0:
        raise UsageError(f"({args.k1}, {args.k2}) must be coprime positive integers")
    return kepler.torus_constants(args.k1, args.k2, args.e)


def _thetas(args):
    return melnikov.default_thetas(args.thetas)


def _emit(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_k_curve(args):
    lo, hi = args.e_min, args.e_max
    if not (0.0 < lo < hi < 1.0) or args.samples < 2:
        raise UsageError("need 0 < e_min < e_max < 1 and at least 2 samples")
    rows = kepler.k_curve(np.linspace(lo, hi, args.samples))
    _emit("e,K\n" + "".join(f"{e!r},{K!r}\n" for e, K in rows), args.out)
    return EXIT_OK


def cmd_verify(args):
    torus = _torus(args)
    route = "spatial" if args.spatial else args.route
    report = melnikov.verify_A2(torus, _thetas(args), args.deltas, args.nodes, route)
    if args.json:
        report.to_json(args.json)
    if args.csv:
        report.to_csv(args.csv)
    if not args.json:
        sys.stdout.write(report.to_json() + "\n")
    final = report.final_results()
    print(f"torus k1={torus.k1} k2={torus.k2} e={torus.e} route={route}", file=sys.stderr)
    for r in final:
        print(f"  theta2={r.theta2:.4f} I1={r.quadrature:.6e} |I1|={abs(r.quadrature):.4e} "
              f"ratio={r.ratio:.4f} ratio_derived={r.ratio_derived:.6f}", file=sys.stderr)
    print(f"min|I1|={report.min_abs:.4e} error={report.max_error:.2e} verdict={report.verdict}",
          file=sys.stderr)
    return EXIT_OK if report.verdict else EXIT_VERDICT


def cmd_scan(args):
    pairs = _pairs(args.pairs)
    for k1, k2 in pairs:
        if k1 <= 0 or k2 <= 0 or math.gcd(k1, k2) != 1:
            raise UsageError(f"({k1}, {k2}) must be coprime positive integers")
    e_grid = args.e_grid
    if any(not 0.0 < e < 1.0 for e in e_grid):
        raise UsageError("eccentricities must lie in (0, 1)")
    t0 = time.perf_counter()
    reports, failures = melnikov.resonance_scan(pairs, e_grid, _thetas(args), args.deltas,
                                                args.nodes, workers=args.workers)
    elapsed = time.perf_counter() - t0
    rows = melnikov.scan_summary_rows(reports, failures)
    if args.csv:
        melnikov.write_rows_csv(args.csv, [row for r in reports for row in r.rows()])
    if args.summary_csv:
        melnikov.write_rows_csv(args.summary_csv, rows, melnikov.SCAN_COLUMNS)
    doc = {"schema": SCHEMA, "kind": "scan", "elapsed_s": elapsed,
           "cells": [r.to_dict() for r in reports], "failures": failures}
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(doc, fh, indent=1)
    for row in rows:
        print(f"k1={row['k1']} k2={row['k2']} e={row['e']} verdict={row['verdict']}", file=sys.stderr)
    print(f"{len(reports)} cells, {len(failures)} failures, {elapsed:.1f} s", file=sys.stderr)
    if failures:
        return EXIT_NUMERIC
    return EXIT_OK if all(r.verdict for r in reports) else EXIT_VERDICT


def resonant_initial_state(torus, phibar=0.0):
    """Cartesian state at ``t = 0`` on the resonant orbit with apse angle ``phibar``.

    The true anomaly is ``varphi(t)`` and the inertial polar angle is
    ``varphi(t) - phibar``, so ``r = p / (1 + e cos(polar angle + phibar))``
    with ``p = (k2/k1)^(2/3) (1 - e^2)``.
    """
    f0 = kepler.solve_phi_real(0.0, torus)
    e, I2 = torus.e, torus.I2
    r0 = torus.semi_latus_rectum / (1.0 + e * math.cos(f0))
    pr = e * math.sin(f0) / I2
    return np.array(dynamics.polar_to_cart(dynamics.PolarState(r0, f0 - phibar, pr, I2)))


def orbit_table(torus, mu, t_end, samples=400, phibar=0.0, tol=1e-12):
    """Propagate the expanded planar field; columns of the orbit CSV.

    Returns ``(names, rows, summary)``; ``summary['drift_rel_err']`` compares
    ``(I1(t) - I1(0)) / mu`` with the integral of ``h1`` along the samples.
    """
    s0 = resonant_initial_state(torus, phibar)
    ts = np.linspace(0.0, t_end, samples)
    traj = dynamics.propagate(lambda y: dynamics.planar_field_expanded(y, mu), s0, (0.0, t_end),
                              tol, t_eval=ts,
                              energy=lambda y: dynamics.hamiltonian_planar_expanded(y, mu))
    rows = []
    for t, y in zip(traj.t, traj.y):
        d = delaunay.delaunay_from_cart(y)
        h1 = delaunay.h1_planar(d.I1, d.I2, d.theta1, d.theta2)
        rows.append([t, *y, d.I1, d.I2, d.theta1, d.theta2, h1])
    arr = np.array(rows)
    I1 = arr[:, 5]
    h1 = arr[:, 9]
    predicted = np.concatenate([[0.0], np.cumsum(0.5 * (h1[1:] + h1[:-1]) * np.diff(arr[:, 0]))])
    summary = {"mu": mu, "t_end": t_end, "I1_spread": float(np.ptp(I1)),
               "energy_drift": traj.energy_drift, "r0": float(math.hypot(s0[0], s0[1]))}
    if mu > 0:
        measured = (I1 - I1[0]) / mu
        scale = max(np.max(np.abs(predicted)), 1e-300)
        summary["drift_rel_err"] = float(np.max(np.abs(measured - predicted)) / scale)
    names = ["t", "x", "y", "px", "py", "I1", "I2", "theta1", "theta2", "h1"]
    return names, arr, summary


def cmd_orbit(args):
    torus = _torus(args)
    if args.mu < 0:
        raise UsageError("mu must be non-negative")
    if args.mu > 1e-2:
        warnings.warn("mu > 1e-2: first-order drift prediction is unreliable")
    t_end = args.t_end if args.t_end is not None else 2 * math.pi * torus.ratio
    code = EXIT_OK
    try:
        names, arr, summary = orbit_table(torus, args.mu, t_end, args.samples, args.phibar)
    except SingularityError as exc:
        if exc.t_last is None or exc.t_last <= 0.0:
            raise
        # partial output up to the last accepted time before the failure
        n = max(2, int(args.samples * exc.t_last / t_end))
        names, arr, summary = orbit_table(torus, args.mu, exc.t_last, n, args.phibar)
        summary["error"] = f"{type(exc).__name__}: {exc}"
        code = EXIT_NUMERIC
    text = ",".join(names) + "\n" + "".join(",".join(repr(float(v)) for v in row) + "\n" for row in arr)
    _emit(text, args.out)
    print(json.dumps({"schema": SCHEMA, "kind": "orbit_summary", **summary}), file=sys.stderr)
    return code


def cmd_roundtrip(args):
    rng = np.random.default_rng(args.seed)
    wp, ws = audit.roundtrip_errors(rng, args.points)
    ok = wp < args.tol and ws < args.tol
    print(json.dumps({"schema": SCHEMA, "kind": "roundtrip", "planar_max_error": wp,
                      "spatial_max_error": ws, "tolerance": args.tol, "passed": ok}))
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_audit(args):
    checks = audit.run_audit(quick=args.quick, seed=args.seed)
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _torus_args(p):
    p.add_argument("k1", type=int)
    p.add_argument("k2", type=int)
    p.add_argument("e", type=float)


def _contour_args(p):
    p.add_argument("--thetas", type=int, default=8, help="number of theta2 grid points")
    p.add_argument("--deltas", type=_floats, default=list(melnikov.DEFAULT_DELTAS),
                   help="decreasing contour radii, e.g. '1e-2 3e-3 1e-3'")
    p.add_argument("--nodes", type=int, default=64)


def build_parser():
    parser = _Parser(prog="cr3bp-melnikov", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file with option defaults; flags win")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("k-curve", help="CSV of (e, K(e))")
    p.add_argument("--e-min", type=float, default=0.05)
    p.add_argument("--e-max", type=float, default=0.95)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_k_curve)

    p = sub.add_parser("verify", help="(A2) verification on one resonant torus")
    _torus_args(p)
    _contour_args(p)
    p.add_argument("--spatial", action="store_true", help="evaluate through the spatial transform")
    p.add_argument("--route", choices=melnikov.ROUTES, default="torus")
    p.add_argument("--json")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("scan", help="(A2) verification over resonances and eccentricities")
    p.add_argument("--pairs", default=DEFAULT_PAIRS, help="space-separated k1,k2 pairs")
    p.add_argument("--e-grid", type=_floats, default=[0.2, 0.4, 0.6, 0.8])
    _contour_args(p)
    p.add_argument("--workers", type=int, default=None,
                   help=f"process count (default: ${melnikov.THREADS_ENV} or 1)")
    p.add_argument("--csv")
    p.add_argument("--summary-csv")
    p.add_argument("--json")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("orbit", help="propagate a resonant orbit and compare the I1 drift with h1")
    _torus_args(p)
    p.add_argument("--mu", type=float, default=1e-5)
    p.add_argument("--t-end", type=float, default=None, help="default: one resonant period")
    p.add_argument("--phibar", type=float, default=0.0)
    p.add_argument("--samples", type=int, default=400)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_orbit)

    p = sub.add_parser("roundtrip", help="Delaunay round trips at random points")
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--seed", type=int, default=12345)
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_roundtrip)

    p = sub.add_parser("audit", help="run the invariant suite")
    p.add_argument("--quick", action="store_true")
    p.add_argument("--seed", type=int, default=12345)
    p.set_defaults(func=cmd_audit)
    return parser


def _load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path!r}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = _load_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(cfg) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return exc.code
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, DomainError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SingularityError, ConvergenceError, ArithmeticError) as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
