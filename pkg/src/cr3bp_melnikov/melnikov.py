"""
Contour quadrature of the first component of the Melnikov-type integral
around the complex-time branch point of a resonant Kepler orbit.

The integrand ``tilde_h1`` is the first-order action drift along the
resonant torus, rescaled so that

    I_1 = -(3 k2 / (k1 I1*^4)) * contour_integral(tilde_h1(t; theta2) dt).

It has a square-root branch point at ``t*``, so it is not periodic on a
circle around ``t*``: one turn changes sheet.  The circle is therefore
parametrised by the angle ``alpha`` on ``(cut - 2 pi, cut)`` and
integrated with Gauss-Legendre nodes, which converge spectrally on the
cut interval.  The periodic trapezoid rule is kept for circles that do
not enclose a singularity.

Every node is reached by continuation from a real anchor: a vertical
spoke from ``Re(center)`` to the bottom of the circle, then arcs in both
directions.  The spoke and arcs are cached per contour; only the root
of the separation to the secondary depends on ``theta2`` and is tracked
along the cached points.
"""

from __future__ import annotations

import cmath
import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from functools import lru_cache
from typing import Optional

import numpy as np

from . import delaunay, kepler
from .dynamics import SCHEMA
from .errors import DomainError, SingularityError
from .kepler import AnomalyTrig, ComplexPath, ResonantTorus

THREADS_ENV = "CR3BP_MELNIKOV_THREADS"
DEFAULT_DELTAS = (1e-2, 3e-3, 1e-3)
ROUTES = ("torus", "planar", "spatial")


@dataclass(frozen=True)
class ContourSpec:
    """Circle ``|t - center| = delta`` with ``n_nodes`` quadrature nodes.

    ``center=None`` means the branch point ``t*`` of the torus.  ``rule`` is
    ``"gauss"`` (Gauss-Legendre in angle on ``(cut - 2 pi, cut)``) or
    ``"trapezoid"`` (periodic rule, for circles enclosing no singularity).
    """

    delta: float = 1e-3
    n_nodes: int = 64
    center: Optional[complex] = None
    rule: str = "gauss"
    cut: float = math.pi

    def __post_init__(self):
        if not self.delta > 0.0:
            raise DomainError("delta must be positive")
        if self.n_nodes < 64:
            raise DomainError("n_nodes must be at least 64")
        if self.rule not in ("gauss", "trapezoid"):
            raise DomainError(f"unknown rule {self.rule!r}")
        if not -0.5 * math.pi < self.cut <= 1.5 * math.pi:
            raise DomainError("cut angle must lie in (-pi/2, 3 pi/2]")

    def resolve_center(self, torus):
        return torus.t_star if self.center is None else complex(self.center)

    def validate(self, torus):
        c = self.resolve_center(torus)
        if self.center is None and self.delta >= 0.5 * torus.K * torus.ratio:
            raise DomainError("delta must be below K k2 / (2 k1)")
        if c.imag - self.delta <= 0.0:
            raise DomainError("contour must stay in the upper half plane")
        if not (0.0 < c.real - self.delta and c.real + self.delta < torus.T_star):
            raise DomainError("contour must avoid the lines Re t = 0 and Re t = T*")
        return c

    def doubled(self):
        return ContourSpec(self.delta, 2 * self.n_nodes, self.center, self.rule, self.cut)

    def nodes(self):
        """Angles and weights (for ``d alpha``) of the quadrature rule."""
        lo = self.cut - 2.0 * math.pi
        n = self.n_nodes
        if self.rule == "gauss":
            x, w = np.polynomial.legendre.leggauss(n)
            return lo + math.pi * (x + 1.0), math.pi * w
        alpha = lo + (np.arange(n) + 0.5) * (2.0 * math.pi / n)
        return alpha, np.full(n, 2.0 * math.pi / n)


# ---------------------------------------------------------------------------
# continuation to the nodes
# ---------------------------------------------------------------------------

@dataclass
class NodePaths:
    """Continued eccentric anomaly along the spoke and both arcs.

    ``segments`` is a list of point sequences ``(t, E, varphi)``, each
    starting at the real anchor; ``node_at[j] = (segment, index)`` locates
    node ``j``.
    """

    center: complex
    alpha: np.ndarray
    weights: np.ndarray
    t_nodes: np.ndarray
    segments: list
    node_at: list
    max_residual: float
    min_jacobian: float
    E_nodes: np.ndarray = field(default=None)

    def node_E(self, j):
        s, i = self.node_at[j]
        return self.segments[s][1][i]

    def node_varphi(self, j):
        s, i = self.node_at[j]
        return self.segments[s][2][i]


def _torus_key(torus):
    return (int(torus.k1), int(torus.k2), float(torus.e))


@lru_cache(maxsize=64)
def _node_paths_cached(key, contour: ContourSpec):
    torus = ResonantTorus(*key)
    c = contour.validate(torus)
    delta = contour.delta
    alpha, weights = contour.nodes()
    t_nodes = c + delta * np.exp(1j * alpha)
    bottom = c - 1j * delta
    spoke_step = min(0.05, 0.25 * c.imag)
    arc_step = 0.25 * delta
    spoke = kepler.continue_path(ComplexPath([c.real, bottom], spoke_step), torus)
    start = (spoke.E[-1], spoke.varphi[-1])
    a0 = -0.5 * math.pi
    up = [j for j in range(len(alpha)) if alpha[j] >= a0]
    down = [j for j in reversed(range(len(alpha))) if alpha[j] < a0]
    segments, node_at = [], [None] * len(alpha)
    worst = spoke.max_residual
    min_jac = np.inf
    for order in (up, down):
        if not order:
            continue
        way = [bottom]
        prev = a0
        for j in order:
            # intermediate waypoints keep chords close to the circle
            m = max(1, int(math.ceil(abs(alpha[j] - prev) / 0.1)))
            for a in np.linspace(prev, alpha[j], m + 1)[1:-1]:
                way.append(c + delta * cmath.exp(1j * a))
            way.append(t_nodes[j])
            prev = alpha[j]
        try:
            arc = kepler.continue_path(ComplexPath(way, arc_step), torus, start=start)
        except SingularityError as exc:
            raise SingularityError(f"continuation failed on the contour ({exc})", exc.t_last) from exc
        worst = max(worst, arc.max_residual)
        t_all = np.concatenate([spoke.t, arc.t[1:]])
        E_all = np.concatenate([spoke.E, arc.E[1:]])
        v_all = np.concatenate([spoke.varphi, arc.varphi[1:]])
        offset = len(spoke.t) - 1
        wp = 1
        for j in order:
            # skip intermediate waypoints
            while abs(arc.t[arc.waypoint_index[wp]] - t_nodes[j]) > 1e-14 * (1 + abs(t_nodes[j])):
                wp += 1
            node_at[j] = (len(segments), arc.waypoint_index[wp] + offset)
            wp += 1
        segments.append((t_all, E_all, v_all))
    E_nodes = np.array([segments[s][1][i] for s, i in node_at])
    min_jac = float(np.min(np.abs(1.0 - torus.e * np.cos(E_nodes))))
    return NodePaths(c, alpha, weights, t_nodes, segments, node_at, worst, min_jac, E_nodes)


def node_paths(torus, contour: ContourSpec):
    return _node_paths_cached(_torus_key(torus), contour)


# ---------------------------------------------------------------------------
# integrand
# ---------------------------------------------------------------------------

def _torus_terms(tr: AnomalyTrig, t, theta2, torus):
    # cos/sin of phi + theta2 = varphi - t + theta2, plus the squared separation
    e, I2 = torus.e, torus.I2
    g = theta2 - t
    cg, sg = cmath.cos(g), cmath.sin(g)
    ca = tr.cos * cg - tr.sin * sg
    sa = tr.sin * cg + tr.cos * sg
    D = 1.0 - 2.0 * (I2 * I2 / tr.w) * ca + (I2 * I2 / tr.w) ** 2
    return ca, sa, D


def _track_root(D, ref):
    root = cmath.sqrt(D)
    if ref is not None and abs(root + ref) < abs(root - ref):
        root = -root
    return root


def tilde_h1_from_trig(tr: AnomalyTrig, t, theta2, torus, root):
    """Integrand from the torus closed form given ``varphi`` trig values.

    ``root`` is the tracked ``sqrt(D)`` with ``r_hat = (1 + e cos varphi) * root``.
    """
    e, I2 = torus.e, torus.I2
    w = tr.w
    s = tr.sin
    ca, sa, D = _torus_terms(tr, t, theta2, torus)
    rhat = w * root
    if abs(rhat) == 0.0:
        raise SingularityError("complex collision: r_hat = 0")
    return (e / I2 ** 5 * w ** 2 * s
            + 2.0 * e / I2 ** 7 * w ** 3 * s * ca
            + w ** 4 * sa / I2 ** 7
            - (e * I2 * w ** 2 * s + w ** 4 * sa / I2 - e / I2 * w ** 3 * s * ca) / rhat ** 3)


def _route_value(route, tr, t, varphi, theta2, torus, root):
    if route == "torus":
        return tilde_h1_from_trig(tr, t, theta2, torus, root)
    f = complex(varphi)
    scale = 1.0 / torus.ratio
    if route == "planar":
        return scale * delaunay.h1_planar_from_anomaly(
            torus.I1, torus.I2, f, complex(theta2 + math.pi - t), root_ref=root)
    if route == "spatial":
        # planar slice: I3 = I2, argument of pericentre 0, node carries theta2
        return scale * delaunay.h1_spatial_from_anomaly(
            torus.I1, torus.I2, torus.I2, f, 0j, complex(theta2 + math.pi - t), root_ref=root)
    raise DomainError(f"unknown route {route!r}")


def _roots_along(segment, theta2, torus):
    t_all, E_all, _ = segment
    ref = None
    roots = np.empty(len(t_all), dtype=complex)
    for i, (t, E) in enumerate(zip(t_all, E_all)):
        tr = AnomalyTrig(E, torus.e)
        D = _torus_terms(tr, t, theta2, torus)[2]
        if abs(D) < 1e-14:
            raise SingularityError("complex collision with the secondary on the path", t_last=t)
        if ref is None:
            root = cmath.sqrt(D)
            if root.real < 0:
                root = -root
        else:
            root = _track_root(D, ref)
        roots[i] = root
        ref = root
    return roots


def integrand_at_nodes(torus, theta2, paths: NodePaths, route="torus"):
    roots = [_roots_along(seg, theta2, torus) for seg in paths.segments]
    vals = np.empty(len(paths.t_nodes), dtype=complex)
    for j, (s, i) in enumerate(paths.node_at):
        t_all, E_all, v_all = paths.segments[s]
        tr = AnomalyTrig(E_all[i], torus.e)
        vals[j] = _route_value(route, tr, t_all[i], v_all[i], theta2, torus, roots[s][i])
    return vals


def tilde_h1(t, theta2, torus, route="torus", max_step=0.05):
    """Integrand at complex time ``t``, continued along the vertical spoke from ``Re t``."""
    t = complex(t)
    sol = kepler.continue_path(ComplexPath([t.real, t], max_step), torus)
    seg = (sol.t, sol.E, sol.varphi)
    root = _roots_along(seg, theta2, torus)[-1]
    tr = AnomalyTrig(sol.E[-1], torus.e)
    return _route_value(route, tr, t, sol.varphi[-1], theta2, torus, root)


def tilde_h1_real(t, theta2, torus):
    """Real-axis integrand evaluated entirely in real arithmetic."""
    e, I2 = torus.e, torus.I2
    v = kepler.solve_phi_real(t, torus)
    w = 1.0 + e * math.cos(v)
    s = math.sin(v)
    a = v - t + theta2
    ca, sa = math.cos(a), math.sin(a)
    rhat = math.sqrt(w * w - 2.0 * I2 * I2 * w * ca + I2 ** 4)
    return (e / I2 ** 5 * w ** 2 * s + 2.0 * e / I2 ** 7 * w ** 3 * s * ca + w ** 4 * sa / I2 ** 7
            - (e * I2 * w ** 2 * s + w ** 4 * sa / I2 - e / I2 * w ** 3 * s * ca) / rhat ** 3)


def prefactor(torus):
    """``-3 k2 / (k1 I1*^4)``: the nonzero entry of ``D omega`` times ``k2/k1``."""
    return -3.0 * torus.ratio / torus.I1 ** 4


# ---------------------------------------------------------------------------
# quadrature and asymptotics
# ---------------------------------------------------------------------------

@dataclass
class MelnikovResult:
    theta2: float
    quadrature: complex
    asymptotic: complex
    ratio: complex
    delta: float
    n_nodes: int
    node_residual: float
    continuation_error: float
    asymptotic_derived: complex = 0j
    ratio_derived: complex = 0j
    max_node_integrand: float = 0.0
    route: str = "torus"

    @property
    def error_estimate(self):
        """Absolute error bound: node-doubling plus propagated continuation error."""
        return abs(self.quadrature) * (self.node_residual + self.continuation_error)

    def to_dict(self):
        d = asdict(self)
        for k, v in list(d.items()):
            if isinstance(v, complex):
                d[k] = [v.real, v.imag]
        d["error_estimate"] = self.error_estimate
        return d


def _contour_sum(vals, paths):
    dt = 1j * (paths.t_nodes - paths.center)
    return complex(np.sum(paths.weights * vals * dt))


def contour_integral(torus, theta2, contour: ContourSpec, route="torus"):
    """``contour_integral(tilde_h1 dt)`` and the node values."""
    paths = node_paths(torus, contour)
    vals = integrand_at_nodes(torus, theta2, paths, route)
    return _contour_sum(vals, paths), vals, paths


def _continuation_error(paths, torus):
    # E error ~ residual / |1 - e cos E|; the integrand behaves like (E - E*)^-5
    E_star = kepler.singular_eccentric_anomaly(torus)
    eps = 4e-16 * (1.0 + np.max(np.abs(paths.E_nodes)))
    res = max(paths.max_residual, eps)
    dist = np.abs(paths.E_nodes - E_star)
    return float(np.max(5.0 * res / (paths.min_jacobian * dist)))


def melnikov_quadrature(torus, theta2, contour: ContourSpec = ContourSpec(), route="torus"):
    """First component ``I_1`` of the Melnikov-type integral.

    The node-doubling residual is the relative change on doubling
    ``n_nodes``.
    """
    I_n, vals, paths = contour_integral(torus, theta2, contour, route)
    I_2n, _, paths2 = contour_integral(torus, theta2, contour.doubled(), route)
    pf = prefactor(torus)
    value = pf * I_n
    residual = abs(I_2n - I_n) / max(abs(I_2n), 1e-300)
    asym = asymptotic_I1(torus, theta2, contour.delta)
    centered = contour.center is None
    derived = asymptotic_I1_derived(torus, theta2, contour.delta) if centered else 0j
    return MelnikovResult(
        theta2=float(theta2), quadrature=value, asymptotic=asym, ratio=value / asym,
        delta=contour.delta, n_nodes=contour.n_nodes, node_residual=float(residual),
        continuation_error=max(_continuation_error(paths, torus), _continuation_error(paths2, torus)),
        asymptotic_derived=derived, ratio_derived=value / derived if derived else 0j,
        max_node_integrand=float(np.max(np.abs(vals))), route=route)


def _phase(torus, theta2):
    return cmath.exp(-(torus.ratio * torus.K + 1j * (theta2 - torus.ratio * math.pi)))


def asymptotic_I1(torus, theta2, delta):
    """Closed-form leading term as published,
    ``-9 (1 - i) k1^2 (1 - e^2)^(1/4) / (4 e k2^2 delta^(3/2)) * exp(-(k2 K / k1 + i (theta2 - k2 pi / k1)))``.
    """
    e = torus.e
    return (-9.0 * (1 - 1j) * torus.k1 ** 2 * (1.0 - e * e) ** 0.25
            / (4.0 * e * torus.k2 ** 2 * delta ** 1.5) * _phase(torus, theta2))


def asymptotic_I1_derived(torus, theta2, delta):
    """Leading term re-derived from the local expansion of the integrand.

    With ``exp(-i varphi) ~ s (1 - i)(1 - e^2)^(3/4) sqrt(k2/k1) / (e sqrt(t - t*))``
    the ``zeta^(-5/2)`` part of the integrand is
    ``(3i/32) e^4 exp(-5 i varphi) exp(i(t - theta2)) / I2*^7`` and its integral
    over the circle cut at ``arg zeta = pi`` is ``-(4/3) i delta^(-3/2)`` times
    the coefficient, giving
    ``1.5 s (1 - i)(1 - e^2)^(1/4) (k1/k2)^(1/6) X / (e delta^(3/2))``.
    """
    e = torus.e
    s = kepler.branch_sign(torus)
    return (1.5 * s * (1 - 1j) * (1.0 - e * e) ** 0.25 * torus.ratio ** (-1.0 / 6.0)
            / (e * delta ** 1.5) * _phase(torus, theta2))


# ---------------------------------------------------------------------------
# (A2) verification and scans
# ---------------------------------------------------------------------------

@dataclass
class A2Report:
    torus: ResonantTorus
    thetas: list
    deltas: list
    results: list
    min_abs: float
    max_error: float
    verdict: bool
    route: str = "torus"
    errors: list = field(default_factory=list)

    def rows(self):
        for r in self.results:
            yield {
                "k1": self.torus.k1, "k2": self.torus.k2, "e": self.torus.e,
                "theta2": r.theta2, "delta": r.delta,
                "re": r.quadrature.real, "im": r.quadrature.imag, "abs": abs(r.quadrature),
                "ratio_err": abs(r.ratio - 1.0), "verdict": self.verdict,
                "ratio_err_derived": abs(r.ratio_derived - 1.0),
            }

    def final_results(self):
        """Results at the smallest ``delta``."""
        d = min(self.deltas)
        return [r for r in self.results if r.delta == d]

    def ratio_trend(self, theta2, derived=False):
        """``|ratio - 1|`` per ``delta`` (schedule order) at one ``theta2``."""
        out = []
        for d in self.deltas:
            for r in self.results:
                if r.delta == d and r.theta2 == theta2:
                    out.append(abs((r.ratio_derived if derived else r.ratio) - 1.0))
        return out

    def to_dict(self):
        return {
            "schema": SCHEMA, "kind": "a2_report", "torus": self.torus.to_dict(),
            "semi_latus_rectum": self.torus.semi_latus_rectum,
            "thetas": list(self.thetas), "deltas": list(self.deltas), "route": self.route,
            "min_abs": self.min_abs, "max_error": self.max_error, "verdict": self.verdict,
            "errors": list(self.errors),
            "results": [r.to_dict() for r in self.results],
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_csv(self, path):
        write_rows_csv(path, list(self.rows()))


CSV_COLUMNS = ["k1", "k2", "e", "theta2", "delta", "re", "im", "abs", "ratio_err", "verdict",
               "ratio_err_derived"]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows_csv(path, rows, columns=CSV_COLUMNS):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(columns)
        for row in rows:
            wr.writerow([_fmt(row.get(c, "")) for c in columns])


def default_thetas(n=8):
    return [2.0 * math.pi * j / n for j in range(n)]


def verify_A2(torus, thetas=None, deltas=DEFAULT_DELTAS, n_nodes=64, route="torus"):
    """Quadrature over a ``theta2`` grid and ``delta`` schedule with a verdict.

    The verdict is true iff ``min |I_1|`` over the grid at the smallest
    ``delta`` exceeds ``1e3`` times the largest error estimate there.
    """
    thetas = default_thetas() if thetas is None else [float(t) for t in thetas]
    deltas = [float(d) for d in deltas]
    if not thetas:
        raise DomainError("theta grid is empty")
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise DomainError("delta schedule must be strictly decreasing")
    results = []
    for d in deltas:
        contour = ContourSpec(d, n_nodes)
        for th in thetas:
            results.append(melnikov_quadrature(torus, th, contour, route))
    final = [r for r in results if r.delta == deltas[-1]]
    min_abs = min(abs(r.quadrature) for r in final)
    max_err = max(r.error_estimate for r in final)
    verdict = bool(min_abs > 1e3 * max_err)
    return A2Report(torus, thetas, deltas, results, min_abs, max_err, verdict, route)


def _scan_cell(args):
    (k1, k2), e, thetas, deltas, n_nodes, route = args
    try:
        torus = ResonantTorus(k1, k2, e)
        return verify_A2(torus, thetas, deltas, n_nodes, route)
    except (DomainError, SingularityError, ArithmeticError) as exc:
        return {"k1": k1, "k2": k2, "e": e, "error": f"{type(exc).__name__}: {exc}"}


def thread_count(default=1):
    try:
        return max(1, int(os.environ.get(THREADS_ENV, default)))
    except ValueError:
        return default


def resonance_scan(k_pairs, e_grid, thetas=None, deltas=DEFAULT_DELTAS, n_nodes=64,
                   route="torus", workers=None):
    """One ``A2Report`` per ``(k1, k2, e)`` cell; failing cells are recorded, not raised.

    Returns ``(reports, failures)``.  Cells run in a process pool when
    ``workers`` (default: the thread-count environment variable) exceeds one.
    """
    jobs = [((int(k1), int(k2)), float(e), thetas, tuple(deltas), n_nodes, route)
            for k1, k2 in k_pairs for e in e_grid]
    workers = thread_count() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_scan_cell, jobs))
    else:
        out = [_scan_cell(j) for j in jobs]
    reports = [o for o in out if isinstance(o, A2Report)]
    failures = [o for o in out if not isinstance(o, A2Report)]
    return reports, failures


SCAN_COLUMNS = ["k1", "k2", "e", "semi_latus_rectum", "min_abs", "max_error", "verdict"]


def scan_summary_rows(reports, failures=()):
    rows = [{"k1": r.torus.k1, "k2": r.torus.k2, "e": r.torus.e,
             "semi_latus_rectum": r.torus.semi_latus_rectum, "min_abs": r.min_abs,
             "max_error": r.max_error, "verdict": r.verdict} for r in reports]
    rows += [{"k1": f["k1"], "k2": f["k2"], "e": f["e"], "verdict": False} for f in failures]
    return rows
