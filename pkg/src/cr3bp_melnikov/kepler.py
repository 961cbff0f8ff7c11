"""
Real and complex-time solution of the Kepler angle on a resonant torus.

On the torus with frequency ratio ``k1:k2`` and eccentricity ``e`` the
true anomaly ``varphi(t)`` is fixed by ``varphi(k2 pi / k1) = 0`` and

    k1 t / k2 - pi = E - e sin E,

``E`` being the eccentric anomaly of ``varphi``.  Complex continuation is
carried out on ``E``, which satisfies an entire equation; all functions
of ``varphi`` needed downstream are rational in ``(cos E, sin E)``.  The
only finite singularities are the square-root branch points where
``1 - e cos E = 0``, the nearest one in the upper half plane being
``t* = (k2 / k1)(pi + i K(e))``.
"""

from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .delaunay import solve_kepler, _true_from_eccentric
from .errors import ConvergenceError, DomainError, SingularityError

TWO_PI = 2.0 * math.pi


def K_of_e(e):
    """Imaginary offset of the branch point, ``2 artanh(beta) - sqrt(1 - e^2)``.

    ``beta = (1 - e) / sqrt(1 - e^2)``.
    """
    if not 0.0 < e < 1.0:
        raise DomainError(f"eccentricity must lie in (0, 1), got {e!r}")
    q = math.sqrt((1.0 - e) * (1.0 + e))
    return 2.0 * math.atanh((1.0 - e) / q) - q


@dataclass(frozen=True)
class ResonantTorus:
    """Resonant Kepler torus with frequency ratio ``omega_1 = k1 / k2``."""

    k1: int
    k2: int
    e: float
    I1: float = field(init=False)
    I2: float = field(init=False)
    omega_star: float = field(init=False)
    T_star: float = field(init=False)
    K: float = field(init=False)
    t_star: complex = field(init=False)

    def __post_init__(self):
        if not (isinstance(self.k1, (int, np.integer)) and isinstance(self.k2, (int, np.integer))):
            raise DomainError("k1, k2 must be integers")
        if self.k1 <= 0 or self.k2 <= 0:
            raise DomainError("k1, k2 must be positive")
        if math.gcd(int(self.k1), int(self.k2)) != 1:
            raise DomainError(f"({self.k1}, {self.k2}) not coprime; reduce the ratio")
        K = K_of_e(self.e)
        I1 = (self.k2 / self.k1) ** (1.0 / 3.0)
        set_ = object.__setattr__
        set_(self, "I1", I1)
        set_(self, "I2", I1 * math.sqrt((1.0 - self.e) * (1.0 + self.e)))
        set_(self, "omega_star", 1.0 / self.k2)
        set_(self, "T_star", TWO_PI * self.k2)
        set_(self, "K", K)
        set_(self, "t_star", complex(self.k2 * math.pi / self.k1, self.k2 * K / self.k1))

    @property
    def ratio(self):
        """``k2 / k1``: time scale of one radial period over ``2 pi``."""
        return self.k2 / self.k1

    @property
    def omega(self):
        """Unperturbed frequencies ``(1 / I1^3, -1)``."""
        return (1.0 / self.I1 ** 3, -1.0)

    @property
    def D_omega(self):
        return np.array([[-3.0 / self.I1 ** 4, 0.0], [0.0, 0.0]])

    @property
    def periapsis_time(self):
        return self.ratio * math.pi

    @property
    def semi_latus_rectum(self):
        return self.ratio ** (2.0 / 3.0) * (1.0 - self.e * self.e)

    def to_dict(self):
        return {"k1": int(self.k1), "k2": int(self.k2), "e": self.e, "I1": self.I1,
                "I2": self.I2, "K": self.K, "t_star": [self.t_star.real, self.t_star.imag]}


def torus_constants(k1, k2, e):
    return ResonantTorus(k1, k2, e)


def radial_period(torus):
    """``2 pi I2^3 / (1 - e^2)^(3/2)``: period of the Keplerian ellipse."""
    return TWO_PI * torus.I2 ** 3 / (1.0 - torus.e ** 2) ** 1.5


# ---------------------------------------------------------------------------
# anomaly relations
# ---------------------------------------------------------------------------

def mean_anomaly(t, torus):
    return t / torus.ratio - math.pi


def kepler_residual_E(E, t, torus):
    return E - torus.e * (cmath.sin(E) if isinstance(E, complex) else math.sin(E)) - mean_anomaly(t, torus)


def eccentric_from_true(varphi, e):
    """Unwrapped eccentric anomaly of a real true anomaly."""
    b = e / (1.0 + math.sqrt(1.0 - e * e))
    return varphi - 2.0 * math.atan2(b * math.sin(varphi), 1.0 + b * math.cos(varphi))


def implicit_residual(varphi, t, torus):
    """Residual of the implicit equation for a real, unwrapped ``varphi``."""
    e = torus.e
    E = eccentric_from_true(varphi, e)
    return t / torus.ratio - (E - e * math.sqrt(1 - e * e) * math.sin(varphi) / (1 + e * math.cos(varphi)) + math.pi)


def solve_phi_real(t, torus):
    """Unwrapped true anomaly ``varphi(t)`` on the real axis."""
    E = solve_kepler(mean_anomaly(t, torus), torus.e)
    return _true_from_eccentric(E, torus.e)


def phi_dot(varphi, torus):
    """``d varphi / dt`` from the flow relation."""
    e = torus.e
    c = cmath.cos(varphi) if isinstance(varphi, complex) else math.cos(varphi)
    return (1.0 + e * c) ** 2 / (torus.ratio * (1.0 - e * e) ** 1.5)


class AnomalyTrig:
    """Trigonometric functions of ``varphi`` expressed through ``E``.

    Attributes are ``cos``, ``sin`` (of ``varphi``), ``w = 1 + e cos varphi``
    and ``exp_minus_i = exp(-i varphi)``.  Valid for complex ``E``.
    """

    __slots__ = ("cos", "sin", "w", "exp_minus_i")

    def __init__(self, E, e):
        cE, sE = cmath.cos(E), cmath.sin(E)
        den = 1.0 - e * cE
        q = math.sqrt((1.0 - e) * (1.0 + e))
        self.cos = (cE - e) / den
        self.sin = q * sE / den
        self.w = q * q / den
        self.exp_minus_i = self.cos - 1j * self.sin


# ---------------------------------------------------------------------------
# complex continuation
# ---------------------------------------------------------------------------

@dataclass
class ComplexPath:
    """Polyline in complex time with a step bound for the continuation."""

    waypoints: list
    max_step: float = 0.05

    def __post_init__(self):
        self.waypoints = [complex(w) for w in self.waypoints]
        if len(self.waypoints) < 1:
            raise DomainError("empty path")

    @classmethod
    def segment(cls, t0, t1, max_step=0.05):
        return cls([t0, t1], max_step)


@dataclass
class PathSolution:
    """Accepted continuation points: times, eccentric anomalies, unwrapped ``varphi``.

    ``waypoint_index[j]`` is the position of waypoint ``j`` in the arrays.
    """

    t: np.ndarray
    E: np.ndarray
    varphi: np.ndarray
    waypoint_index: list
    max_residual: float

    @property
    def end(self):
        return self.t[-1], self.E[-1], self.varphi[-1]


def _newton_E(E, t, torus, tol=1e-14, maxiter=12):
    e = torus.e
    M = mean_anomaly(t, torus)
    for it in range(1, maxiter + 1):
        F = E - e * cmath.sin(E) - M
        # near the branch point J -> 0 and only the residual can reach round-off
        if abs(F) <= 4e-16 * (1.0 + abs(E) + abs(M)) and it > 1:
            return E, it
        J = 1.0 - e * cmath.cos(E)
        if J == 0:
            return None, it
        dE = F / J
        E -= dE
        if abs(dE) <= tol * max(1.0, abs(E)):
            return E, it
    return None, maxiter


def _varphi_from_E(E, e, prev):
    """Unwrapped complex ``varphi`` whose real part is continuous with ``prev``."""
    tr = AnomalyTrig(E, e)
    v = 1j * cmath.log(tr.exp_minus_i)
    k = round((prev.real - v.real) / TWO_PI)
    return v + k * TWO_PI


def continue_path(path: ComplexPath, torus, start=None, floor=1e-6, min_distance=1e-6):
    """Predictor-corrector continuation of ``E`` along ``path``.

    The path must start on the real axis unless ``start = (E0, varphi0)``
    supplies the state at ``path.waypoints[0]``.  Steps are halved when the
    corrector needs more than five Newton iterations and doubled when it
    needs at most two; a step below ``floor`` raises ``SingularityError``
    with the closest approach to ``t*`` recorded on the exception.
    """
    e = torus.e
    t0 = path.waypoints[0]
    if start is None:
        if abs(t0.imag) > 0.0:
            raise DomainError("path must start on the real axis")
        E = complex(solve_kepler(mean_anomaly(t0.real, torus), e))
        varphi = complex(_true_from_eccentric(E.real, e))
    else:
        E, varphi = complex(start[0]), complex(start[1])
    ts, Es, vs = [t0], [E], [varphi]
    index = [0]
    worst = abs(kepler_residual_E(E, t0, torus))
    closest = abs(t0 - torus.t_star)
    t = t0
    h = path.max_step
    for target in path.waypoints[1:]:
        while t != target:
            dist = abs(target - t)
            step = min(h, dist, path.max_step)
            tn = target if step >= dist else t + (target - t) * (step / dist)
            # Euler predictor dE/dt = 1 / (ratio (1 - e cos E))
            Ep = E + (tn - t) / (torus.ratio * (1.0 - e * cmath.cos(E)))
            En, its = _newton_E(Ep, tn, torus)
            if En is None or its > 5:
                h = 0.5 * step
                if h < floor:
                    exc = SingularityError(
                        f"continuation stalled near t={t!r} (closest approach to t* "
                        f"{closest:.3e})", t_last=t)
                    exc.closest_approach = closest
                    raise exc
                continue
            if its <= 2:
                h = min(2.0 * step, path.max_step)
            t, E = tn, En
            varphi = _varphi_from_E(E, e, varphi)
            ts.append(t)
            Es.append(E)
            vs.append(varphi)
            worst = max(worst, abs(kepler_residual_E(E, t, torus)))
            closest = min(closest, abs(t - torus.t_star))
        index.append(len(ts) - 1)
    if closest < min_distance and abs(path.waypoints[-1] - torus.t_star) > min_distance:
        warnings.warn("path passes within min_distance of t*", RuntimeWarning)
    return PathSolution(np.array(ts), np.array(Es), np.array(vs), index, worst)


def continue_phi(path: ComplexPath, torus, **kw):
    """``varphi`` at the end of ``path`` (unwrapped along the path)."""
    return continue_path(path, torus, **kw).varphi[-1]


def phi_at(t, torus, max_step=0.05):
    """``varphi(t)`` continued along the vertical spoke from ``Re t``."""
    t = complex(t)
    return continue_phi(ComplexPath([t.real, t], max_step), torus)


# ---------------------------------------------------------------------------
# branch point
# ---------------------------------------------------------------------------

def singular_eccentric_anomaly(torus):
    """``E*`` with ``cos E* = 1/e``: critical point of Kepler's equation."""
    return 1j * math.acosh(1.0 / torus.e)


def singular_asymptotic_raw(t, torus):
    """Leading term of ``exp(-i varphi)`` with the principal square root."""
    e = torus.e
    z = complex(t) - torus.t_star
    return ((1 - 1j) * (1.0 - e * e) ** 0.75 * math.sqrt(torus.ratio)
            / (e * cmath.sqrt(z)))


@lru_cache(maxsize=256)
def _branch_sign(k1, k2, e, radius):
    torus = ResonantTorus(k1, k2, e)
    tc = torus.t_star - 1j * radius
    sol = continue_path(ComplexPath([torus.t_star.real, tc], 0.05), torus)
    v = AnomalyTrig(sol.E[-1], e).exp_minus_i
    ratio = v / singular_asymptotic_raw(tc, torus)
    return 1 if ratio.real > 0 else -1


def branch_sign(torus, radius=1e-3):
    """Sign aligning the principal root with continuation from the real axis.

    Determined once per torus by matching at ``t* - i radius`` (reached
    along the vertical spoke) and then frozen.  The radius is capped at a
    quarter of ``Im t*`` so that the calibration point stays above the
    conjugate branch point when ``e`` is close to one.
    """
    radius = min(radius, 0.25 * torus.t_star.imag)
    return _branch_sign(int(torus.k1), int(torus.k2), float(torus.e), float(radius))


def singular_asymptotic(t, torus, winding=0):
    """Leading term of ``exp(-i varphi(t))`` near ``t*``.

    ``winding`` counts full turns of ``t - t*`` away from the principal
    sheet; each turn flips the sign (square-root branch point).
    """
    z = complex(t) - torus.t_star
    if abs(z) > 0.1 * torus.ratio * torus.K:
        warnings.warn("asymptotic evaluated far from t*", RuntimeWarning)
    return branch_sign(torus) * (-1) ** winding * singular_asymptotic_raw(t, torus)


def locate_singularity(torus, start=None, tol=1e-10, maxiter=60):
    """Locate the blow-up point of ``Im varphi`` by extrapolation along a ray.

    From a point below ``t*`` on the vertical spoke, repeat
    ``t <- t - 1 / (2 i varphi'(t))`` (exact for ``exp(-i varphi) ~ c (t - t*)^(-1/2)``)
    while continuing ``varphi`` to each new iterate.  Newton on Kepler's
    equation loses conditioning as ``t -> t*``; iteration stops once the
    continuation to the next iterate is no longer resolvable and the
    pending step is below ``1e-6 |t|``.
    """
    t = complex(torus.t_star.real, 0.5 * torus.t_star.imag) if start is None else complex(start)
    sol = continue_path(ComplexPath([t.real, t], 0.05), torus)
    E = sol.E[-1]
    varphi = sol.varphi[-1]
    for _ in range(maxiter):
        tr = AnomalyTrig(E, torus.e)
        dphi = tr.w ** 2 / (torus.ratio * (1.0 - torus.e ** 2) ** 1.5)
        step = -1.0 / (2j * dphi)
        t_new = t + 0.9 * step if abs(step) > 1e-3 else t + step
        if abs(t_new - t) < tol * abs(t):
            return t_new
        try:
            seg = continue_path(ComplexPath([t, t_new], abs(t_new - t) / 4 + 1e-15), torus,
                                start=(E, varphi), floor=1e-14)
        except SingularityError:
            if abs(step) < 1e-6 * abs(t):
                return t_new
            raise
        t, E, varphi = seg.end
    raise ConvergenceError("singularity location did not converge", {"t": t})


def k_curve(e_values):
    """``(e, K(e))`` rows."""
    return [(float(e), K_of_e(float(e))) for e in e_values]


def write_k_curve_csv(path, e_values):
    with open(path, "w") as fh:
        fh.write("e,K\n")
        for e, K in k_curve(e_values):
            fh.write(f"{e!r},{K!r}\n")
