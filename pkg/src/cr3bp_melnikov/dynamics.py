"""
Vector fields, Hamiltonians and coordinate charts for the circular
restricted three-body problem in the rotating frame.

Two flavours of every field are provided:

* ``*_exact`` -- the full problem with primaries of mass ``1 - mu`` at
  ``(-mu, 0, 0)`` and ``mu`` at ``(1 - mu, 0, 0)``;
* ``*_expanded`` -- the Taylor expansion of the full problem about
  ``mu = 0`` truncated after the linear term.  The large primary sits at the
  origin and the small one at ``(1, 0, 0)``.

All functions accept plain sequences or numpy arrays and are written with
numpy ufuncs only, so complex-valued inputs (complex-step differentiation)
pass straight through.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.integrate import DOP853

from .errors import CollisionError, DomainError, SingularityError

SCHEMA = "cr3bp-melnikov/1"

#: Distance to a primary below which field evaluations raise.
COLLISION_THRESHOLD = 1e-8


class PlanarCartesianState(NamedTuple):
    x: float
    y: float
    px: float
    py: float


class SpatialCartesianState(NamedTuple):
    x: float
    y: float
    z: float
    px: float
    py: float
    pz: float


class PolarState(NamedTuple):
    r: float
    phi: float
    pr: float
    pphi: float


class SphericalState(NamedTuple):
    """Spherical chart; ``psi`` is the colatitude measured from +z."""

    r: float
    phi: float
    psi: float
    pr: float
    pphi: float
    ppsi: float


def _check_distance(d, where):
    if np.ndim(d) == 0 and abs(d) < COLLISION_THRESHOLD:
        raise CollisionError(f"collision with primary at {where} (distance {abs(d):.3e})")
    if np.ndim(d) > 0 and np.any(np.abs(d) < COLLISION_THRESHOLD):
        raise CollisionError(f"collision with primary at {where}")


# ---------------------------------------------------------------------------
# planar problem
# ---------------------------------------------------------------------------

def planar_field_exact(s, mu):
    """Time derivative ``(xdot, ydot, pxdot, pydot)`` of the full planar problem.

    Parameters
    ----------
    s : array_like, shape (4,)
        ``(x, y, px, py)`` in the rotating frame.
    mu : float
        Mass ratio, ``0 <= mu < 1``.
    """
    if not 0.0 <= mu < 1.0:
        raise DomainError("mass ratio must satisfy 0 <= mu < 1")
    x, y, px, py = s
    d1 = np.sqrt((x + mu) ** 2 + y ** 2)
    _check_distance(d1, "(-mu, 0)")
    if mu > 0.0:
        d2 = np.sqrt((x - 1 + mu) ** 2 + y ** 2)
        _check_distance(d2, "(1 - mu, 0)")
        ax = -mu * (x - 1 + mu) / d2 ** 3
        ay = -mu * y / d2 ** 3
    else:
        ax = ay = 0.0
    ax = ax - (1 - mu) * (x + mu) / d1 ** 3
    ay = ay - (1 - mu) * y / d1 ** 3
    return np.array([px + y, py - x, py + ax, -px + ay])


def planar_field_expanded(s, mu):
    """Planar field truncated at first order in ``mu``."""
    x, y, px, py = s
    rho2 = x * x + y * y
    rho = np.sqrt(rho2)
    _check_distance(rho, "origin")
    kx = -x / rho ** 3
    ky = -y / rho ** 3
    if mu != 0.0:
        d = np.sqrt((x - 1) ** 2 + y ** 2)
        _check_distance(d, "(1, 0)")
        kx = kx + mu * (((x - 1) * rho2 + 3 * x * x) / rho ** 5 - (x - 1) / d ** 3)
        ky = ky + mu * ((y * rho2 + 3 * x * y) / rho ** 5 - y / d ** 3)
    return np.array([px + y, py - x, py + kx, -px + ky])


def perturbation_planar(x, y):
    """First-order coefficient of the planar Hamiltonian (Cartesian)."""
    rho2 = x * x + y * y
    return (rho2 + x) / rho2 ** 1.5 - 1.0 / np.sqrt((x - 1) ** 2 + y ** 2)


def hamiltonian_planar_exact(s, mu):
    x, y, px, py = s
    d1 = np.sqrt((x + mu) ** 2 + y ** 2)
    d2 = np.sqrt((x - 1 + mu) ** 2 + y ** 2)
    _check_distance(d1, "(-mu, 0)")
    u = (1 - mu) / d1
    if mu > 0.0:
        _check_distance(d2, "(1 - mu, 0)")
        u = u + mu / d2
    return 0.5 * (px * px + py * py) + (px * y - py * x) - u


def hamiltonian_planar_expanded(s, mu):
    """Planar Hamiltonian truncated at first order in ``mu``."""
    x, y, px, py = s
    rho = np.sqrt(x * x + y * y)
    _check_distance(rho, "origin")
    h = 0.5 * (px * px + py * py) - 1.0 / rho + y * px - x * py
    if mu != 0.0:
        _check_distance(np.sqrt((x - 1) ** 2 + y ** 2), "(1, 0)")
        h = h + mu * perturbation_planar(x, y)
    return h


# ---------------------------------------------------------------------------
# spatial problem
# ---------------------------------------------------------------------------

def spatial_field_exact(s, mu):
    """Time derivative of the full spatial problem, six components."""
    if not 0.0 <= mu < 1.0:
        raise DomainError("mass ratio must satisfy 0 <= mu < 1")
    x, y, z, px, py, pz = s
    d1 = np.sqrt((x + mu) ** 2 + y ** 2 + z ** 2)
    _check_distance(d1, "(-mu, 0, 0)")
    g1 = (1 - mu) / d1 ** 3
    ax = -g1 * (x + mu)
    ay = -g1 * y
    az = -g1 * z
    if mu > 0.0:
        d2 = np.sqrt((x - 1 + mu) ** 2 + y ** 2 + z ** 2)
        _check_distance(d2, "(1 - mu, 0, 0)")
        g2 = mu / d2 ** 3
        ax = ax - g2 * (x - 1 + mu)
        ay = ay - g2 * y
        az = az - g2 * z
    return np.array([px + y, py - x, pz, py + ax, -px + ay, az])


def spatial_field_expanded(s, mu):
    """Spatial field truncated at first order in ``mu``.

    The first-order terms are the negative gradient of
    :func:`perturbation_spatial`.
    """
    x, y, z, px, py, pz = s
    rho2 = x * x + y * y + z * z
    rho = np.sqrt(rho2)
    _check_distance(rho, "origin")
    kx = -x / rho ** 3
    ky = -y / rho ** 3
    kz = -z / rho ** 3
    if mu != 0.0:
        d = np.sqrt((x - 1) ** 2 + y ** 2 + z ** 2)
        _check_distance(d, "(1, 0, 0)")
        kx = kx + mu * (((x - 1) * rho2 + 3 * x * x) / rho ** 5 - (x - 1) / d ** 3)
        ky = ky + mu * ((y * rho2 + 3 * x * y) / rho ** 5 - y / d ** 3)
        kz = kz + mu * ((z * rho2 + 3 * x * z) / rho ** 5 - z / d ** 3)
    return np.array([px + y, py - x, pz, py + kx, -px + ky, kz])


def perturbation_spatial(x, y, z):
    """First-order coefficient of the spatial Hamiltonian (Cartesian)."""
    rho2 = x * x + y * y + z * z
    return (rho2 + x) / rho2 ** 1.5 - 1.0 / np.sqrt((x - 1) ** 2 + y ** 2 + z ** 2)


def perturbation_spatial_gradient(x, y, z):
    """Gradient of :func:`perturbation_spatial` with respect to ``(x, y, z)``."""
    rho2 = x * x + y * y + z * z
    rho5 = rho2 ** 2.5
    d3 = ((x - 1) ** 2 + y ** 2 + z ** 2) ** 1.5
    # d/dx [(rho2 + x) / rho^3] = (2x + 1) / rho^3 - 3x (rho2 + x) / rho^5
    gx =(2 * x + 1) / rho2 ** 1.5 - 3 * x * (rho2 + x) / rho5 + (x - 1) / d3
    gy = 2 * y / rho2 ** 1.5 - 3 * y * (rho2 + x) / rho5 + y / d3
    gz = 2 * z / rho2 ** 1.5 - 3 * z * (rho2 + x) / rho5 + z / d3
    return gx, gy, gz


def hamiltonian_spatial_exact(s, mu):
    x, y, z, px, py, pz = s
    d1 = np.sqrt((x + mu) ** 2 + y ** 2 + z ** 2)
    _check_distance(d1, "(-mu, 0, 0)")
    u = (1 - mu) / d1
    if mu > 0.0:
        d2 = np.sqrt((x - 1 + mu) ** 2 + y ** 2 + z ** 2)
        _check_distance(d2, "(1 - mu, 0, 0)")
        u = u + mu / d2
    return 0.5 * (px * px + py * py + pz * pz) + (px * y - py * x) - u


def hamiltonian_spatial_expanded(s, mu):
    """Spatial Hamiltonian truncated at first order in ``mu``."""
    x, y, z, px, py, pz = s
    rho = np.sqrt(x * x + y * y + z * z)
    _check_distance(rho, "origin")
    h = 0.5 * (px * px + py * py + pz * pz) - 1.0 / rho + y * px - x * py
    if mu != 0.0:
        _check_distance(np.sqrt((x - 1) ** 2 + y ** 2 + z ** 2), "(1, 0, 0)")
        h = h + mu * perturbation_spatial(x, y, z)
    return h


def kepler_energy(s):
    """Two-body energy about the origin, ``|p|^2 / 2 - 1 / |q|``.

    ``p`` is the inertial velocity expressed in rotating axes, so this is the
    unperturbed Kepler energy for either a planar or a spatial state.
    """
    s = np.asarray(s)
    n = s.shape[0] // 2
    q, p = s[:n], s[n:]
    return 0.5 * np.sum(p * p, axis=0) - 1.0 / np.sqrt(np.sum(q * q, axis=0))


# ---------------------------------------------------------------------------
# charts
# ---------------------------------------------------------------------------

def cart_to_polar(s):
    x, y, px, py = s
    r = math.hypot(x, y)
    if r == 0.0:
        raise DomainError("polar chart undefined at the origin")
    phi = math.atan2(y, x)
    c, sn = x / r, y / r
    return PolarState(r, phi, px * c + py * sn, r * (py * c - px * sn))


def polar_to_cart(p):
    r, phi, pr, pphi = p
    if r <= 0.0:
        raise DomainError("polar radius must be positive")
    c, sn = math.cos(phi), math.sin(phi)
    return PlanarCartesianState(r * c, r * sn, pr * c - pphi * sn / r, pr * sn + pphi * c / r)


def cart_to_spherical(s):
    x, y, z, px, py, pz = s
    rxy = math.hypot(x, y)
    r = math.hypot(rxy, z)
    if r == 0.0:
        raise DomainError("spherical chart undefined at the origin")
    if rxy == 0.0:
        raise DomainError("spherical chart undefined on the polar axis")
    phi = math.atan2(y, x)
    psi = math.atan2(rxy, z)
    cph, sph = x / rxy, y / rxy
    cps, sps = z / r, rxy / r
    pr = (x * px + y * py + z * pz) / r
    pphi = x * py - y * px
    ppsi = r * (cps * (cph * px + sph * py) - sps * pz)
    return SphericalState(r, phi, psi, pr, pphi, ppsi)


def spherical_to_cart(p):
    r, phi, psi, pr, pphi, ppsi = p
    sps = math.sin(psi)
    if r <= 0.0:
        raise DomainError("spherical radius must be positive")
    if abs(sps) < 1e-14:
        raise DomainError("spherical chart undefined on the polar axis")
    cph, sph, cps = math.cos(phi), math.sin(phi), math.cos(psi)
    x, y, z = r * sps * cph, r * sps * sph, r * cps
    px = pr * cph * sps - pphi * sph / (r * sps) + ppsi * cph * cps / r
    py = pr * sph * sps + pphi * cph / (r * sps) + ppsi * sph * cps / r
    pz = pr * cps - ppsi * sps / r
    return SpatialCartesianState(x, y, z, px, py, pz)


def perturbation_polar(r, phi):
    """First-order Hamiltonian coefficient in polar variables."""
    return (r + np.cos(phi)) / r ** 2 - 1.0 / np.sqrt(r * r + 1 - 2 * r * np.cos(phi))


def perturbation_polar_partials(r, phi):
    """``(dH/dr, dH/dphi)`` of :func:`perturbation_polar`."""
    c, s = np.cos(phi), np.sin(phi)
    dm3 = (r * r + 1 - 2 * r * c) ** -1.5
    dr = -1.0 / r ** 2 - 2 * c / r ** 3 + (r - c) * dm3
    dphi = -s / r ** 2 + r * s * dm3
    return dr, dphi


def perturbation_spherical(r, psi, phi):
    w = np.sin(psi) * np.cos(phi)
    return (r + w) / r ** 2 - 1.0 / np.sqrt(r * r + 1 - 2 * r * w)


def perturbation_spherical_partials(r, psi, phi):
    """``(dH/dr, dH/dpsi, dH/dphi)`` of :func:`perturbation_spherical`."""
    sps, cps = np.sin(psi), np.cos(psi)
    sph, cph = np.sin(phi), np.cos(phi)
    w = sps * cph
    dm3 = (r * r + 1 - 2 * r * w) ** -1.5
    dr = -1.0 / r ** 2 - 2 * w / r ** 3 + (r - w) * dm3
    dw = 1.0 / r ** 2 - r * dm3
    return dr, dw * cps * cph, -dw * sps * sph


def hamiltonian_polar(p, mu):
    r, phi, pr, pphi = p
    h = 0.5 * (pr * pr + pphi * pphi / r ** 2) - 1.0 / r - pphi
    if mu != 0.0:
        h = h + mu * perturbation_polar(r, phi)
    return h


def hamiltonian_spherical(p, mu):
    r, phi, psi, pr, pphi, ppsi = p
    h = 0.5 * (pr * pr + ppsi * ppsi / r ** 2 + pphi * pphi / (r * np.sin(psi)) ** 2) - 1.0 / r - pphi
    if mu != 0.0:
        h = h + mu * perturbation_spherical(r, psi, phi)
    return h


# ---------------------------------------------------------------------------
# propagation
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Samples of a propagated orbit.

    ``t`` is strictly monotone (increasing for forward runs); ``y`` has one
    row per sample.  ``meta`` records tolerances, step counts and, when an
    energy function was supplied, the maximum energy drift.
    """

    t: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)
    dense: Optional[Callable] = None

    @property
    def energy_drift(self):
        return self.meta.get("energy_drift")

    def __call__(self, t):
        if self.dense is None:
            raise ValueError("trajectory was built without dense output")
        return self.dense(t)

    def to_csv(self, path, names: Optional[Sequence[str]] = None):
        names = list(names or [f"y{i}" for i in range(self.y.shape[1])])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *names])
            for ti, yi in zip(self.t, self.y):
                w.writerow([repr(float(ti)), *(repr(float(v)) for v in yi)])

    def to_json(self, path=None, names: Optional[Sequence[str]] = None):
        names = list(names or [f"y{i}" for i in range(self.y.shape[1])])
        doc = {
            "schema": SCHEMA,
            "kind": "trajectory",
            "columns": ["t", *names],
            "meta": {k: v for k, v in self.meta.items() if _jsonable(v)},
            "t": [float(v) for v in self.t],
            "y": [[float(v) for v in row] for row in self.y],
        }
        if path is not None:
            with open(path, "w") as fh:
                json.dump(doc, fh, indent=1)
        return doc


def _jsonable(v):
    return isinstance(v, (int, float, str, bool, type(None), list, tuple))


class _Dense:
    def __init__(self, pieces, forward):
        self.pieces = pieces
        self.forward = forward
        self.ends = np.array([p.t_max if forward else -p.t_min for p in pieces])

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        key = t if self.forward else -t
        idx = np.clip(np.searchsorted(self.ends, key), 0, len(self.pieces) - 1)
        out = np.empty((t.size, self.pieces[0](self.pieces[0].t_min).size))
        for j, (tj, i) in enumerate(zip(t, idx)):
            out[j] = self.pieces[i](tj)
        return out


def propagate(field, s0, t_span, tol=1e-12, *, t_eval=None, energy=None,
              max_steps=2_000_000, dense=False):
    """Integrate an autonomous field with the 8(5,3) Dormand-Prince pair.

    Parameters
    ----------
    field : callable
        ``field(y) -> ydot``.
    s0 : array_like
        Initial state.
    t_span : (float, float)
        Start and end times; backward integration is allowed.
    tol : float
        Relative and absolute local error tolerance.
    t_eval : array_like, optional
        Output times (within ``t_span``).  Defaults to the accepted steps.
    energy : callable, optional
        ``energy(y) -> float``; the maximum drift over the samples is stored in
        ``meta["energy_drift"]``.
    dense : bool
        Keep the piecewise interpolant (``Trajectory.__call__``).

    Raises
    ------
    CollisionError
        The field reported a collision; ``t_last`` is the last accepted time.
    SingularityError
        Step size underflow (typically near a collision).
    """
    if tol <= 0:
        raise DomainError("tolerance must be positive")
    t0, t1 = map(float, t_span)
    y0 = np.asarray(s0, dtype=float)
    solver = DOP853(lambda t, y: field(y), t0, y0, t1, rtol=tol, atol=tol)
    ts, ys, pieces = [t0], [y0.copy()], []
    n_steps = 0
    while solver.status == "running":
        t_prev = solver.t
        try:
            msg = solver.step()
        except CollisionError as exc:
            raise CollisionError(str(exc), t_last=t_prev) from exc
        if solver.status == "failed":
            raise SingularityError(f"integration failed near t={t_prev:.17g}: {msg}", t_last=t_prev)
        n_steps += 1
        if n_steps > max_steps:
            raise SingularityError("step budget exhausted", t_last=solver.t)
        if t_eval is not None or dense:
            pieces.append(solver.dense_output())
        ts.append(solver.t)
        ys.append(solver.y.copy())
    forward = t1 >= t0
    interp = _Dense(pieces, forward) if pieces else None
    if t_eval is not None:
        t_out = np.asarray(t_eval, dtype=float)
        y_out = interp(t_out)
    else:
        t_out, y_out = np.array(ts), np.array(ys)
    meta = {"rtol": tol, "atol": tol, "n_steps": n_steps, "nfev": solver.nfev,
            "method": "DOP853"}
    if energy is not None:
        e = np.array([energy(row) for row in y_out])
        meta["energy_drift"] = float(np.max(np.abs(e - energy(y0))))
    return Trajectory(t_out, y_out, meta, interp if dense or t_eval is not None else None)
