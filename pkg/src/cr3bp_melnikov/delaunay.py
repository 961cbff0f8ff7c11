"""
Delaunay action-angle coordinates of the Kepler problem in the rotating
frame, for the planar and the spatial problems.

Conventions
-----------
The planar transform is generated by ``W = I2*phi + chi(r, I1, I2)`` and
the spatial one by ``I3*phi + chi(r, I1, I2) + chi_hat(psi, I2, I3)``.  The
additive constants are fixed by ``chi(r_plus) = 0`` (apoapsis) and
``chi_hat(psi_0) = 0`` (northern turning latitude).  With these choices

* ``theta1`` is the mean anomaly minus ``pi`` (measured from apoapsis),
* planar ``theta2`` is the rotating-frame longitude of apoapsis,
* spatial ``theta2`` is the argument of pericentre plus ``pi/2`` and
  ``theta3`` the rotating-frame node longitude plus ``pi/2``.

The multivalued square roots in ``chi`` and ``chi_hat`` are handled with
explicit branch signs: ``sigma = sign(p_r)`` and ``tau = sign(p_psi)``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, asdict
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.differentiate import derivative

from . import dynamics
from .dynamics import PolarState, SphericalState
from .errors import ConvergenceError, DomainError, SingularityError

TWO_PI = 2.0 * math.pi


def wrap(angle):
    """Wrap to ``(-pi, pi]``."""
    a = math.remainder(angle, TWO_PI)
    return math.pi if a == -math.pi else a


class DelaunayPlanar(NamedTuple):
    I1: float
    I2: float
    theta1: float
    theta2: float
    sigma: int = 1


class DelaunaySpatial(NamedTuple):
    I1: float
    I2: float
    I3: float
    theta1: float
    theta2: float
    theta3: float
    sigma: int = 1
    tau: int = 1


# ---------------------------------------------------------------------------
# radial generating function
# ---------------------------------------------------------------------------

def _check_actions(I1, I2):
    if not I1 > 0.0:
        raise DomainError("I1 must be positive")
    if I2 == 0.0 or abs(I2) > I1 * (1 + 1e-14):
        raise DomainError("elliptic regime requires 0 < |I2| <= I1")


def eccentricity(I1, I2):
    a2 = abs(I2)
    return math.sqrt(max((I1 - a2) * (I1 + a2), 0.0)) / I1


def turning_radii(I1, I2):
    """Peri- and apoapsis radii ``(r_minus, r_plus)``."""
    _check_actions(I1, I2)
    s = I1 * eccentricity(I1, I2)
    return I1 * (I1 - s), I1 * (I1 + s)


def _check_radius(r, I1, I2):
    rm, rp = turning_radii(I1, I2)
    tol = 1e-12 * rp
    if r < rm - tol or r > rp + tol:
        raise DomainError(f"r={r!r} outside [{rm!r}, {rp!r}]")
    return rm, rp


def _radial_momentum(r, I1, I2):
    return math.sqrt(max(2.0 / r - 1.0 / I1 ** 2 - I2 ** 2 / r ** 2, 0.0))


def _true_from_eccentric(E, e):
    # unwrapped true anomaly; 1 - b cos E > 0 keeps atan2 continuous
    b = e / (1.0 + math.sqrt(1.0 - e * e))
    return E + 2.0 * math.atan2(b * math.sin(E), 1.0 - b * math.cos(E))


def _E0_of_r(r, I1, I2):
    e = eccentricity(I1, I2)
    if e == 0.0:
        return 0.0, 0.0
    return math.acos(min(1.0, max(-1.0, (1.0 - r / I1 ** 2) / e))), e


def chi(r, I1, I2, sigma=1):
    """Radial generating function, normalised so that ``chi(r_plus) = 0``.

    Closed form of ``-sigma * int_r^{r_plus} p_r(rho) d rho``.
    """
    rm, rp = _check_radius(r, I1, I2)
    if rp == rm:
        return 0.0
    u = min(max(rp - r, 0.0), rp - rm)
    v = min(max(r - rm, 0.0), rp - rm)
    val = (-2.0 * I1 * math.asin(math.sqrt(u / (rp - rm)))
           + math.sqrt(u * v) / I1
           + 2.0 * abs(I2) * math.atan2(math.sqrt(rm * u), math.sqrt(rp * v)))
    return sigma * val


def chi_r(r, I1, I2, sigma=1):
    """``d chi / d r`` -- the radial momentum on branch ``sigma``."""
    _check_radius(r, I1, I2)
    return sigma * _radial_momentum(r, I1, I2)


def chi1(r, I1, I2, sigma=1):
    """``d chi / d I1``: mean anomaly minus ``pi`` on branch ``sigma``."""
    _check_radius(r, I1, I2)
    E0, e = _E0_of_r(r, I1, I2)
    return sigma * (E0 - e * math.sin(E0) - math.pi)


def chi2(r, I1, I2, sigma=1):
    """``d chi / d I2``: ``pi`` minus the true anomaly on branch ``sigma``."""
    _check_radius(r, I1, I2)
    E0, e = _E0_of_r(r, I1, I2)
    return sigma * math.copysign(1.0, I2) * (math.pi - _true_from_eccentric(E0, e))


def chi2_r(r, I1, I2, sigma=1):
    """``d chi2 / d r``; singular at the turning radii."""
    _check_radius(r, I1, I2)
    pr = sigma * _radial_momentum(r, I1, I2)
    if pr == 0.0:
        raise SingularityError("d chi2/dr is singular at a turning radius")
    return -I2 / (r * r * pr)


# ---------------------------------------------------------------------------
# inverse radial map
# ---------------------------------------------------------------------------

def solve_kepler(mean_anomaly, e, tol=1e-15, maxiter=60):
    """Eccentric anomaly for a real mean anomaly.

    Newton iteration safeguarded by bisection on the bracket containing
    the root (``E - e sin E`` is monotone).  The result is unwrapped, i.e.
    ``E`` lies in the same ``2 pi`` period as ``mean_anomaly``.
    """
    k = math.floor(mean_anomaly / TWO_PI)
    M = mean_anomaly - k * TWO_PI
    if e == 0.0:
        return mean_anomaly
    lo, hi = 0.0, TWO_PI
    E = M + e * math.sin(M) / (1.0 - math.sin(M + e) + math.sin(M)) if e < 0.8 else math.pi
    for it in range(maxiter):
        F = E - e * math.sin(E) - M
        if F > 0.0:
            hi = E
        else:
            lo = E
        dE = F / (1.0 - e * math.cos(E))
        E_new = E - dE
        if not lo < E_new < hi:
            E_new = 0.5 * (lo + hi)
        if abs(E_new - E) <= tol * max(1.0, abs(E)):
            return E_new + k * TWO_PI
        E = E_new
    raise ConvergenceError("Kepler solver did not converge", {"M": M, "e": e, "E": E})


def solve_R(theta1, I1, I2):
    """Radius ``R(theta1, I1, I2)`` solving ``theta1 = chi1(R, I1, I2)``.

    Returns ``(R, E, sigma)``, ``E`` being the eccentric anomaly in
    ``[0, 2 pi)`` and ``sigma`` the branch (sign of ``p_r``) at ``R``.
    """
    _check_actions(I1, I2)
    e = eccentricity(I1, I2)
    E = solve_kepler((theta1 + math.pi) % TWO_PI, e)
    R = I1 ** 2 * (1.0 - e * math.cos(E))
    return R, E, (1 if math.sin(E) >= 0.0 else -1)


def dR_dtheta1(theta1, I1, I2):
    _, E, _ = solve_R(theta1, I1, I2)
    e = eccentricity(I1, I2)
    return I1 ** 2 * e * math.sin(E) / (1.0 - e * math.cos(E))


def _radial_state(theta1, I1, I2):
    R, E, sigma = solve_R(theta1, I1, I2)
    e = eccentricity(I1, I2)
    den = 1.0 - e * math.cos(E)
    pr = e * math.sin(E) / (I1 * den)
    f = _true_from_eccentric(E, e)
    return R, pr, E, f, e, sigma


def _radial_angles_from_state(r, pr, I1, I2, sigma):
    # accurate (E0, f0) in [0, pi] from the state; same values as the chi-based
    # formulas, but without acos conditioning loss at the turning radii
    e = eccentricity(I1, I2)
    if e == 0.0:
        return 0.0, 0.0, e
    E0 = math.atan2(abs(r * pr) / I1, 1.0 - r / I1 ** 2)
    return E0, _true_from_eccentric(E0, e), e


# ---------------------------------------------------------------------------
# planar transform
# ---------------------------------------------------------------------------

def delaunay_from_polar(p, *, flip_branch=False):
    """Planar Delaunay elements of a polar state.

    ``flip_branch`` evaluates the generating-function derivatives on the
    wrong branch; it exists only for mutation tests of the audits.
    """
    r, phi, pr, pphi = p
    if r <= 0.0:
        raise DomainError("radius must be positive")
    I2 = pphi
    if I2 == 0.0:
        raise DomainError("rectilinear orbit (p_phi = 0)")
    energy = 0.5 * (pr * pr + pphi * pphi / r ** 2) - 1.0 / r
    if energy >= 0.0:
        raise DomainError("orbit is not elliptic (Kepler energy >= 0)")
    I1 = 1.0 / math.sqrt(-2.0 * energy)
    sigma = 1 if pr >= 0.0 else -1
    E0, f0, e = _radial_angles_from_state(r, pr, I1, I2, sigma)
    s = -sigma if flip_branch else sigma
    theta1 = s * (E0 - e * math.sin(E0) - math.pi)
    theta2 = phi + s * math.copysign(1.0, I2) * (math.pi - f0)
    return DelaunayPlanar(I1, I2, wrap(theta1), wrap(theta2), sigma)


def polar_from_delaunay(d):
    I1, I2, theta1, theta2 = d[:4]
    R, pr, E, f, e, sigma = _radial_state(theta1, I1, I2)
    phi = theta2 - math.copysign(1.0, I2) * (math.pi - f)
    return PolarState(R, wrap(phi), pr, I2)


def delaunay_from_cart(s):
    return delaunay_from_polar(dynamics.cart_to_polar(s))


def cart_from_delaunay(d):
    return dynamics.polar_to_cart(polar_from_delaunay(d))


def hamiltonian_delaunay_planar(d, mu):
    """Expanded Hamiltonian written in planar Delaunay variables."""
    I1, I2, theta1, theta2 = d[:4]
    h = -0.5 / I1 ** 2 - I2
    if mu != 0.0:
        R, phi, _, _ = polar_from_delaunay(d)
        h += mu * dynamics.perturbation_polar(R, phi)
    return h


def separation_root(R, w, root_ref=None):
    """Scaled distance to the secondary, ``sqrt(R^2 - 2 R w + 1)``.

    For complex arguments the sign of the root is chosen closest to
    ``root_ref`` so that it can be tracked along a path.
    """
    D = R * R - 2.0 * R * w + 1.0
    if abs(D) <= 1e-16:
        raise SingularityError("collision with the secondary (r_hat = 0)")
    if isinstance(D, complex) or root_ref is not None:
        root = cmath.sqrt(D)
        if root_ref is not None and abs(root + root_ref) < abs(root - root_ref):
            root = -root
        return D, root
    return D, math.sqrt(D)


def h1_planar_from_anomaly(I1, I2, f, theta2, root_ref=None):
    """Closed-form ``h1`` in terms of the true anomaly ``f``.

    Accepts complex ``f`` and ``theta2`` (analytic continuation); the root of
    the separation is then tracked through ``root_ref``.
    """
    trig = cmath if isinstance(f, complex) or isinstance(theta2, complex) else math
    e = eccentricity(I1, I2)
    w = 1.0 + e * trig.cos(f)
    R = I2 * I2 / w
    Rt = I1 ** 2 * e * trig.sin(f) / math.sqrt(1.0 - e * e)
    # kappa * dR/dtheta1 with kappa = 1 / (R^2 p_r)
    kappa_Rt = I1 ** 3 / R ** 2
    phi = theta2 - math.copysign(1.0, I2) * (math.pi - f)
    c, s = trig.cos(phi), trig.sin(phi)
    D, root = separation_root(R, c, root_ref)
    dm3 = 1.0 / (D * root)
    return ((1.0 / R ** 2 + 2.0 * c / R ** 3) * Rt
            + I2 * s * kappa_Rt / R ** 2
            - dm3 * (R * (Rt + I2 * s * kappa_Rt) - c * Rt))


def h1_planar(I1, I2, theta1, theta2):
    """First-order coefficient of ``dI1/dt`` from its closed-form expression.

    The expression is assembled term by term from ``R``, ``dR/dtheta1`` and
    the polar angle ``theta2 - chi2(R)``; the radial factor multiplying
    ``I2 sin(phi)`` is ``kappa = 1 / (R^2 p_r)``, which enters only through
    the regular product ``kappa dR/dtheta1 = I1^3 / R^2``.
    """
    f = _radial_state(theta1, I1, I2)[3]
    return h1_planar_from_anomaly(I1, I2, f, theta2)


def _d_dtheta1(fun, theta1):
    res = derivative(np.vectorize(fun), theta1, initial_step=0.05, tolerances={"atol": 1e-13, "rtol": 1e-13})
    return float(res.df)


def h1_planar_chain(I1, I2, theta1, theta2):
    """``-dH1/dtheta1`` by the chain rule with numerically differentiated maps.

    The inverse transform is differentiated numerically in ``theta1`` and
    combined with the analytic partials of the polar perturbation.
    """
    R, phi, _, _ = polar_from_delaunay((I1, I2, theta1, theta2))
    dR = _d_dtheta1(lambda t: polar_from_delaunay((I1, I2, t, theta2)).r, theta1)
    dphi = _d_dtheta1(
        lambda t: phi + wrap(polar_from_delaunay((I1, I2, t, theta2)).phi - phi), theta1)
    Hr, Hphi = dynamics.perturbation_polar_partials(R, phi)
    return -(Hr * dR + Hphi * dphi)


def action_drift_cartesian(s):
    """``dI1/dt`` per unit ``mu`` from a Cartesian state (planar or spatial).

    Uses ``I1 = (-2 E_K)^(-1/2)`` and ``dE_K/dt = -mu p . grad H1``; an
    oracle independent of the Delaunay machinery.  Works for complex states.
    """
    s = np.asarray(s)
    if s.shape[0] == 4:
        x, y, px, py = s
        z = pz = 0.0
    else:
        x, y, z, px, py, pz = s
    I1 = (-2.0 * dynamics.kepler_energy(s)) ** -0.5
    gx, gy, gz = dynamics.perturbation_spatial_gradient(x, y, z)
    return -I1 ** 3 * (px * gx + py * gy + pz * gz)


# ---------------------------------------------------------------------------
# latitudinal generating function
# ---------------------------------------------------------------------------

def _check_spatial_actions(I2, I3):
    if not I2 > 0.0:
        raise DomainError("I2 must be positive in the spatial problem")
    if I3 == 0.0 or abs(I3) > I2 * (1 + 1e-14):
        raise DomainError("requires 0 < |I3| <= I2")


def _inclination(I2, I3):
    c = max(-1.0, min(1.0, I3 / I2))
    si = math.sqrt(max((I2 - abs(I3)) * (I2 + abs(I3)), 0.0)) / I2
    return c, si


def psi0(I2, I3):
    """Northern turning colatitude ``arcsin(|I3| / I2)``."""
    _check_spatial_actions(I2, I3)
    return math.asin(min(1.0, abs(I3) / I2))


def _check_psi(psi, I2, I3):
    p0 = psi0(I2, I3)
    if psi < p0 - 1e-12 or psi > math.pi - p0 + 1e-12:
        raise DomainError(f"psi={psi!r} outside [{p0!r}, {math.pi - p0!r}]")


def chi_hat(psi, I2, I3, tau=1):
    """Latitudinal generating function with ``chi_hat(psi_0) = 0``."""
    _check_psi(psi, I2, I3)
    a3 = abs(I3)
    sq = math.sqrt(max(I2 * I2 * math.sin(psi) ** 2 - I3 * I3, 0.0))
    cp = math.cos(psi)
    return tau * (I2 * math.atan2(sq, I2 * cp) - a3 * math.atan2(sq, a3 * cp))


def chi_hat_psi(psi, I2, I3, tau=1):
    """``d chi_hat / d psi`` = ``p_psi`` on branch ``tau``."""
    _check_psi(psi, I2, I3)
    return tau * math.sqrt(max(I2 * I2 - I3 * I3 / math.sin(psi) ** 2, 0.0))


def _latitude_argument(psi, I2, I3):
    # argument of latitude u0 in [pi/2, 3pi/2] with cos(psi) = sin(i) sin(u0)
    c, si = _inclination(I2, I3)
    if si == 0.0:
        raise SingularityError("argument of latitude undefined for a planar orbit")
    s = max(-1.0, min(1.0, math.cos(psi) / si))
    return math.pi - math.asin(s)


def _node_longitude_offset(u, c):
    # continuous branch of atan2(c sin u, cos u) around u in [pi/2, 3pi/2]
    v = u - math.pi
    return math.copysign(math.pi, c) + math.atan2(c * math.sin(v), math.cos(v))


def chi_hat2(psi, I2, I3, tau=1):
    """``d chi_hat / d I2``: argument of latitude minus ``pi/2``."""
    _check_psi(psi, I2, I3)
    return tau * (_latitude_argument(psi, I2, I3) - 0.5 * math.pi)


def chi_hat3(psi, I2, I3, tau=1):
    """``d chi_hat / d I3``: minus the in-plane longitude from the node, shifted."""
    _check_psi(psi, I2, I3)
    c, _ = _inclination(I2, I3)
    u0 = _latitude_argument(psi, I2, I3)
    return tau * (math.copysign(0.5 * math.pi, c) - _node_longitude_offset(u0, c))


def psi_from_angles(theta1, theta2, I1, I2, I3):
    """Colatitude ``Psi`` solving ``chi_hat2(Psi) + chi2(R) = theta2``.

    Returns ``(Psi, tau)``.  The equation is solved in closed form through
    the argument of latitude ``u = theta2 - chi2(R) + pi/2``.
    """
    _check_spatial_actions(I2, I3)
    R, pr, E, f, e, sigma = _radial_state(theta1, I1, I2)
    u = theta2 + f - 0.5 * math.pi
    c, si = _inclination(I2, I3)
    psi = math.atan2(math.sqrt(math.cos(u) ** 2 + (c * math.sin(u)) ** 2), si * math.sin(u))
    return psi, (1 if -math.cos(u) >= 0.0 else -1)


# ---------------------------------------------------------------------------
# spatial transform
# ---------------------------------------------------------------------------

def spherical_from_delaunay(d):
    I1, I2, I3, theta1, theta2, theta3 = d[:6]
    _check_actions(I1, I2)
    _check_spatial_actions(I2, I3)
    R, pr, E, f, e, sigma = _radial_state(theta1, I1, I2)
    u = theta2 + f - 0.5 * math.pi
    c, si = _inclination(I2, I3)
    su, cu = math.sin(u), math.cos(u)
    spsi = math.sqrt(cu * cu + (c * su) ** 2)
    psi = math.atan2(spsi, si * su)
    phi = theta3 - math.copysign(0.5 * math.pi, c) + math.atan2(c * su, cu)
    ppsi = -I2 * si * cu / spsi
    return SphericalState(R, wrap(phi), psi, pr, I3, ppsi)


def delaunay_from_spherical(p, *, flip_branch=False):
    """Spatial Delaunay elements of a spherical state.

    On the invariant plane (``I3 = I2``) the node is undefined; the node is
    then placed so that ``theta2 = 0``.
    """
    r, phi, psi, pr, pphi, ppsi = p
    sps = math.sin(psi)
    if r <= 0.0 or sps <= 0.0:
        raise DomainError("spherical state on the origin or the polar axis")
    I3 = pphi
    I2 = math.sqrt(ppsi * ppsi + (pphi / sps) ** 2)
    if I2 == 0.0 or I3 == 0.0:
        raise DomainError("requires nonzero angular momentum and z-component")
    energy = 0.5 * (pr * pr + I2 * I2 / r ** 2) - 1.0 / r
    if energy >= 0.0:
        raise DomainError("orbit is not elliptic (Kepler energy >= 0)")
    I1 = 1.0 / math.sqrt(-2.0 * energy)
    sigma = 1 if pr >= 0.0 else -1
    tau = 1 if ppsi >= 0.0 else -1
    E0, f0, e = _radial_angles_from_state(r, pr, I1, I2, sigma)
    s = -sigma if flip_branch else sigma
    theta1 = s * (E0 - e * math.sin(E0) - math.pi)
    ch2 = s * (math.pi - f0)
    c, si = _inclination(I2, I3)
    if si < 1e-12:
        u = 0.5 * math.pi - ch2
        theta2 = 0.0
        theta3 = phi + math.copysign(0.5 * math.pi, c) - math.atan2(c * math.sin(u), math.cos(u))
    else:
        # u0 in [pi/2, 3pi/2] from (si sin u, si cos u) = (cos psi, -|p_psi| sin psi / I2)
        u0 = math.atan2(math.cos(psi), -abs(ppsi) * sps / I2) % TWO_PI
        t = -tau if flip_branch else tau
        theta2 = ch2 + t * (u0 - 0.5 * math.pi)
        theta3 = phi + t * (math.copysign(0.5 * math.pi, c) - _node_longitude_offset(u0, c))
    return DelaunaySpatial(I1, I2, I3, wrap(theta1), wrap(theta2), wrap(theta3), sigma, tau)


def delaunay_spatial_from_cart(s):
    return delaunay_from_spherical(dynamics.cart_to_spherical(s))


def cart_from_delaunay_spatial(d):
    return dynamics.spherical_to_cart(spherical_from_delaunay(d))


def hamiltonian_delaunay_spatial(d, mu):
    I1, I2, I3 = d[:3]
    h = -0.5 / I1 ** 2 - I3
    if mu != 0.0:
        R, phi, psi = spherical_from_delaunay(d)[:3]
        h += mu * dynamics.perturbation_spherical(R, psi, phi)
    return h


def _atan2_any(y, x):
    if isinstance(y, complex) or isinstance(x, complex):
        return -1j * cmath.log((x + 1j * y) / cmath.sqrt(x * x + y * y))
    return math.atan2(y, x)


def h1_spatial_from_anomaly(I1, I2, I3, f, theta2, theta3, root_ref=None):
    """Spatial closed-form ``h1`` in terms of the true anomaly ``f``.

    Assembled from ``R``, ``Psi``, the longitude ``lambda = theta3 -
    chi_hat3(Psi)`` and their ``theta1`` derivatives.  The product
    ``dPsi/dtheta1 * dchi_hat3/dpsi`` enters only through the regular
    combination ``d lambda / d theta1``, so the invariant plane ``I3 = I2``
    is covered.  Accepts complex ``f`` and angles.
    """
    cplx = any(isinstance(v, complex) for v in (f, theta2, theta3))
    trig = cmath if cplx else math
    e = eccentricity(I1, I2)
    w1 = 1.0 + e * trig.cos(f)
    R = I2 * I2 / w1
    Rt = I1 ** 2 * e * trig.sin(f) / math.sqrt(1.0 - e * e)
    ut = w1 ** 2 / (1.0 - e * e) ** 1.5
    u = theta2 + f - 0.5 * math.pi
    c, si = _inclination(I2, I3)
    su, cu = trig.sin(u), trig.cos(u)
    q = cu * cu + (c * su) ** 2
    sP = trig.sqrt(q)
    cP = si * su
    lam = theta3 - math.copysign(0.5 * math.pi, c) + _atan2_any(c * su, cu)
    Pt = -si * cu * ut / sP
    lam_t = c * ut / q
    cl, sl = trig.cos(lam), trig.sin(lam)
    w = sP * cl
    D, root = separation_root(R, w, root_ref)
    dm3 = 1.0 / (D * root)
    return (Rt * (1.0 / R ** 2 + 2.0 * w / R ** 3 - dm3 * (R - w))
            + sP * sl * lam_t / R ** 2 - Pt * cP * cl / R ** 2
            + R * dm3 * (Pt * cP * cl - sP * sl * lam_t))


def h1_spatial(I1, I2, I3, theta1, theta2, theta3):
    """Closed-form first-order coefficient of ``dI1/dt`` (spatial)."""
    _check_spatial_actions(I2, I3)
    f = _radial_state(theta1, I1, I2)[3]
    return h1_spatial_from_anomaly(I1, I2, I3, f, theta2, theta3)


def h1_spatial_chain(I1, I2, I3, theta1, theta2, theta3):
    """Chain-rule ``-dH1/dtheta1`` with numerically differentiated ``R, Psi, phi``."""
    d = [I1, I2, I3, theta1, theta2, theta3]
    R, phi, psi = spherical_from_delaunay(d)[:3]

    def comp(i, ref):
        def g(t):
            q = spherical_from_delaunay([I1, I2, I3, t, theta2, theta3])[i]
            return ref + wrap(q - ref) if i == 1 else q
        return g

    dR = _d_dtheta1(comp(0, R), theta1)
    dphi = _d_dtheta1(comp(1, phi), theta1)
    dpsi = _d_dtheta1(comp(2, psi), theta1)
    Hr, Hpsi, Hphi = dynamics.perturbation_spherical_partials(R, psi, phi)
    return -(Hr * dR + Hpsi * dpsi + Hphi * dphi)


# ---------------------------------------------------------------------------
# symplectic audit
# ---------------------------------------------------------------------------

@dataclass
class TransformAudit:
    point: list
    jacobian: list
    residual: float
    flagged: bool = False
    reason: str = ""

    def to_dict(self):
        return asdict(self)


def standard_form(n):
    om = np.zeros((2 * n, 2 * n))
    om[:n, n:] = np.eye(n)
    om[n:, :n] = -np.eye(n)
    return om


def numeric_jacobian(transform, x, h=1e-6, angle_outputs=()):
    """Central-difference Jacobian; angle outputs are differenced mod 2 pi."""
    x = np.asarray(x, dtype=float)
    y0 = np.asarray(transform(x), dtype=float)
    J = np.empty((y0.size, x.size))
    for j in range(x.size):
        dx = np.zeros_like(x)
        dx[j] = h
        d = np.asarray(transform(x + dx), dtype=float) - np.asarray(transform(x - dx), dtype=float)
        for i in angle_outputs:
            d[i] = math.remainder(d[i], TWO_PI)
        J[:, j] = d / (2 * h)
    return J


def symplectic_audit(transform: Callable, point, h=1e-6, angle_outputs=(),
                     guard: Optional[Callable] = None):
    """Residual ``max |J^T Omega J - Omega|`` of a map ``(q, p) -> (Q, P)``.

    ``guard(point)`` may return a non-empty reason string to reject points
    where finite differences are unreliable (e.g. turning points, where a
    branch switch falls inside the stencil).  Rejected points carry
    ``flagged=True`` and a NaN residual.
    """
    point = [float(v) for v in point]
    if guard is not None:
        reason = guard(point)
        if reason:
            return TransformAudit(point, [], float("nan"), True, reason)
    J = numeric_jacobian(transform, point, h, angle_outputs)
    om = standard_form(len(point) // 2)
    res = float(np.max(np.abs(J.T @ om @ J - om)))
    return TransformAudit(point, J.tolist(), res)


def turning_point_guard(min_momentum=1e-3, momenta=(2,)):
    """Reject points whose listed momentum components are near zero."""
    def guard(point):
        for i in momenta:
            if abs(point[i]) < min_momentum:
                return f"|p[{i}]| < {min_momentum} (turning point)"
        return ""
    return guard


def polar_to_delaunay_map(x, flip_branch=False):
    d = delaunay_from_polar(x, flip_branch=flip_branch)
    return [d.theta1, d.theta2, d.I1, d.I2]


def spherical_to_delaunay_map(x, flip_branch=False):
    r, phi, psi, pr, pphi, ppsi = x
    d = delaunay_from_spherical((r, phi, psi, pr, pphi, ppsi), flip_branch=flip_branch)
    return [d.theta1, d.theta2, d.theta3, d.I1, d.I2, d.I3]


def cart_to_polar_map(x):
    r, phi, pr, pphi = dynamics.cart_to_polar(x)
    return [r, phi, pr, pphi]


def cart_to_spherical_map(x):
    r, phi, psi, pr, pphi, ppsi = dynamics.cart_to_spherical(x)
    # reorder to (q, p) = ((r, phi, psi), (pr, pphi, ppsi))
    return [r, phi, psi, pr, pphi, ppsi]
