"""Invariant suite behind the ``audit`` and ``roundtrip`` commands."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import delaunay, dynamics, kepler, melnikov
from .errors import DomainError


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: {self.value:.3e} (tol {self.tolerance:.1e})"


def _check(name, value, tol):
    return Check(name, bool(value < tol), float(value), tol)


def random_planar_elements(rng, n, margin=0.05):
    """Elliptic planar Delaunay points away from circular and turning-point edges."""
    out = []
    while len(out) < n:
        I1 = rng.uniform(0.7, 1.5)
        I2 = rng.choice([-1.0, 1.0]) * I1 * rng.uniform(0.3, 0.95)
        th1 = rng.uniform(-math.pi, math.pi)
        if min(abs(th1), math.pi - abs(th1)) < margin:
            continue
        out.append(delaunay.DelaunayPlanar(I1, I2, th1, rng.uniform(-math.pi, math.pi)))
    return out


def random_spatial_elements(rng, n, margin=0.05):
    out = []
    while len(out) < n:
        I1 = rng.uniform(0.7, 1.5)
        I2 = I1 * rng.uniform(0.3, 0.95)
        I3 = rng.choice([-1.0, 1.0]) * I2 * rng.uniform(0.2, 0.9)
        th1 = rng.uniform(-math.pi, math.pi)
        d = delaunay.DelaunaySpatial(I1, I2, I3, th1, rng.uniform(-math.pi, math.pi),
                                     rng.uniform(-math.pi, math.pi))
        p = delaunay.spherical_from_delaunay(d)
        if min(abs(th1), math.pi - abs(th1)) < margin or abs(p.ppsi) < margin * I2:
            continue
        out.append(d)
    return out


def _angle_err(a, b):
    return abs(math.remainder(a - b, 2 * math.pi))


def roundtrip_errors(rng, n=20):
    """Worst planar and spatial Delaunay round-trip errors (both directions)."""
    worst_p = 0.0
    for d in random_planar_elements(rng, n):
        d2 = delaunay.delaunay_from_cart(delaunay.cart_from_delaunay(d))
        worst_p = max(worst_p, abs(d2.I1 - d.I1), abs(d2.I2 - d.I2),
                      _angle_err(d2.theta1, d.theta1), _angle_err(d2.theta2, d.theta2))
    worst_s = 0.0
    for d in random_spatial_elements(rng, n):
        d2 = delaunay.delaunay_spatial_from_cart(delaunay.cart_from_delaunay_spatial(d))
        worst_s = max(worst_s, abs(d2.I1 - d.I1), abs(d2.I2 - d.I2), abs(d2.I3 - d.I3),
                      *(_angle_err(a, b) for a, b in zip(d2[3:6], d[3:6])))
    return worst_p, worst_s


def symplectic_residuals(rng, n=20, flip_branch=False):
    """Worst FD symplectic residual per transform at random elliptic points."""
    guard2 = delaunay.turning_point_guard(1e-3, momenta=(2,))
    guard3 = delaunay.turning_point_guard(1e-3, momenta=(3, 5))
    out = {"cart->polar": 0.0, "polar->delaunay": 0.0,
           "cart->spherical": 0.0, "spherical->delaunay": 0.0}
    for d in random_planar_elements(rng, n):
        p = delaunay.polar_from_delaunay(d)
        s = dynamics.polar_to_cart(p)
        a = delaunay.symplectic_audit(delaunay.cart_to_polar_map, s, angle_outputs=(1,))
        out["cart->polar"] = max(out["cart->polar"], a.residual)
        a = delaunay.symplectic_audit(
            lambda x: delaunay.polar_to_delaunay_map(x, flip_branch), p,
            angle_outputs=(0, 1), guard=guard2)
        if not a.flagged:
            out["polar->delaunay"] = max(out["polar->delaunay"], a.residual)
    for d in random_spatial_elements(rng, n):
        p = delaunay.spherical_from_delaunay(d)
        s = dynamics.spherical_to_cart(p)
        a = delaunay.symplectic_audit(delaunay.cart_to_spherical_map, s, angle_outputs=(1,))
        out["cart->spherical"] = max(out["cart->spherical"], a.residual)
        a = delaunay.symplectic_audit(
            lambda x: delaunay.spherical_to_delaunay_map(x, flip_branch), p,
            angle_outputs=(0, 1, 2), guard=guard3)
        if not a.flagged:
            out["spherical->delaunay"] = max(out["spherical->delaunay"], a.residual)
    return out


def cauchy_ratio(torus, delta=1e-3, n_nodes=64):
    """``|I_1| / (max node |integrand| * circumference)`` on a circle around a regular point."""
    center = complex(0.6 * torus.t_star.real, 0.5 * torus.t_star.imag)
    contour = melnikov.ContourSpec(delta, n_nodes, center=center, rule="trapezoid")
    res = melnikov.melnikov_quadrature(torus, 0.3, contour)
    scale = abs(melnikov.prefactor(torus)) * res.max_node_integrand * 2 * math.pi * delta
    return abs(res.quadrature) / scale


def run_audit(quick=False, seed=12345):
    rng = np.random.default_rng(seed)
    n = 5 if quick else 20
    checks = []
    wp, ws = roundtrip_errors(rng, n)
    checks.append(_check("planar Delaunay round trip", wp, 1e-10))
    checks.append(_check("spatial Delaunay round trip", ws, 1e-10))
    for name, v in symplectic_residuals(rng, n).items():
        checks.append(_check(f"symplectic {name}", v, 1e-6))
    # mutation: evaluating chi on the wrong branch must break symplecticity
    mut = symplectic_residuals(np.random.default_rng(seed), 3, flip_branch=True)
    checks.append(Check("mutation (flipped chi branch) detected",
                        mut["polar->delaunay"] > 1e-3 and mut["spherical->delaunay"] > 1e-3,
                        min(mut["polar->delaunay"], mut["spherical->delaunay"]), 1e-3))
    torus = kepler.torus_constants(1, 1, 0.6)
    checks.append(_check("Cauchy vanishing", cauchy_ratio(torus), 1e-8))
    contour = melnikov.ContourSpec(1e-2 if quick else 1e-3, 64)
    a = melnikov.melnikov_quadrature(torus, 0.7, contour, route="planar")
    b = melnikov.melnikov_quadrature(torus, 0.7, contour, route="spatial")
    checks.append(_check("planar/spatial reduction", abs(a.quadrature - b.quadrature) / abs(a.quadrature), 1e-8))
    ks = [kepler.K_of_e(e) for e in np.linspace(0.05, 0.95, 100)]
    checks.append(Check("K(e) strictly decreasing", bool(np.all(np.diff(ks) < 0)), 0.0, 0.0))
    return checks
