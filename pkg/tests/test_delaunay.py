import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.integrate import quad

from cr3bp_melnikov import delaunay as dl
from cr3bp_melnikov import dynamics as dy
from cr3bp_melnikov.errors import DomainError, SingularityError

from oracles import fd_action_drift, torus_grid


# ---------------------------------------------------------------------------
# generating functions
# ---------------------------------------------------------------------------

def radial_momentum(r, I1, I2):
    return math.sqrt(max(2 / r - 1 / I1 ** 2 - I2 ** 2 / r ** 2, 0.0))


@pytest.mark.parametrize("I1,I2", [(1.0, 0.8), (1.3, 0.9), (0.7, -0.5)])
def test_chi_is_integral_of_radial_momentum(I1, I2):
    rm, rp = dl.turning_radii(I1, I2)
    for r in np.linspace(rm, rp, 7)[1:-1]:
        integral = quad(radial_momentum, r, rp, args=(I1, I2), epsabs=1e-13)[0]
        assert dl.chi(r, I1, I2, 1) == pytest.approx(-integral, abs=1e-10)
        assert dl.chi(r, I1, I2, -1) == pytest.approx(integral, abs=1e-10)


def test_chi_vanishes_at_apoapsis():
    rm, rp = dl.turning_radii(1.0, 0.8)
    assert dl.chi(rp, 1.0, 0.8) == 0.0
    assert dl.chi(rm, 1.0, 0.8) == pytest.approx(-math.pi * (1.0 - 0.8), abs=1e-14)


@pytest.mark.parametrize("sigma", [1, -1])
def test_chi_partials_by_central_difference(sigma):
    r, I1, I2, h = 0.9, 1.0, 0.8, 1e-6
    fd1 = (dl.chi(r, I1 + h, I2, sigma) - dl.chi(r, I1 - h, I2, sigma)) / (2 * h)
    fd2 = (dl.chi(r, I1, I2 + h, sigma) - dl.chi(r, I1, I2 - h, sigma)) / (2 * h)
    fdr = (dl.chi(r + h, I1, I2, sigma) - dl.chi(r - h, I1, I2, sigma)) / (2 * h)
    assert abs(fd1 - dl.chi1(r, I1, I2, sigma)) < 1e-8
    assert abs(fd2 - dl.chi2(r, I1, I2, sigma)) < 1e-8
    assert abs(fdr - dl.chi_r(r, I1, I2, sigma)) < 1e-8
    assert dl.chi_r(r, I1, I2, sigma) == pytest.approx(sigma * radial_momentum(r, I1, I2), rel=1e-14)
    fd2r = (dl.chi2(r + h, I1, I2, sigma) - dl.chi2(r - h, I1, I2, sigma)) / (2 * h)
    assert dl.chi2_r(r, I1, I2, sigma) == pytest.approx(fd2r, rel=1e-7)


def test_chi_domain_errors():
    with pytest.raises(DomainError):
        dl.chi(3.0, 1.0, 0.8)
    with pytest.raises(DomainError):
        dl.chi(1.0, 1.0, 1.2)
    with pytest.raises(SingularityError):
        dl.chi2_r(dl.turning_radii(1.0, 0.8)[1], 1.0, 0.8)


@pytest.mark.parametrize("tau", [1, -1])
@pytest.mark.parametrize("I3", [0.5, -0.5])
def test_chi_hat_partials(tau, I3):
    psi, I2, h = 1.2, 0.9, 1e-6
    f = dl.chi_hat
    assert (f(psi, I2 + h, I3, tau) - f(psi, I2 - h, I3, tau)) / (2 * h) == pytest.approx(dl.chi_hat2(psi, I2, I3, tau), abs=1e-8)
    assert (f(psi, I2, I3 + h, tau) - f(psi, I2, I3 - h, tau)) / (2 * h) == pytest.approx(dl.chi_hat3(psi, I2, I3, tau), abs=1e-8)
    assert (f(psi + h, I2, I3, tau) - f(psi - h, I2, I3, tau)) / (2 * h) == pytest.approx(dl.chi_hat_psi(psi, I2, I3, tau), abs=1e-8)


def test_chi_hat_is_latitudinal_integral():
    I2, I3 = 0.8, 0.5
    p0 = dl.psi0(I2, I3)
    integrand = lambda s: math.sqrt(max(I2 ** 2 - I3 ** 2 / math.sin(s) ** 2, 0.0))
    for psi in [p0 + 0.1, 1.2, math.pi / 2, 2.0, math.pi - p0 - 0.05]:
        assert dl.chi_hat(psi, I2, I3) == pytest.approx(quad(integrand, p0, psi)[0], abs=1e-10)
    assert abs(dl.chi_hat(p0, I2, I3)) < 1e-15


def test_chi_hat_collapses_on_invariant_plane():
    assert dl.psi0(0.9, 0.9) == pytest.approx(math.pi / 2)
    assert dl.chi_hat(math.pi / 2, 0.9, 0.9, 1) == 0.0
    assert dl.chi_hat(math.pi / 2, 0.9, 0.9, -1) == 0.0
    with pytest.raises(DomainError):
        dl.chi_hat(1.0, 0.9, 0.95)


def test_psi_from_angles_solves_latitude_equation():
    I1, I2, I3 = 1.2, 0.9, 0.5
    for th1, th2 in [(0.3, 0.4), (-2.0, 2.5), (1.7, -1.0)]:
        psi, tau = dl.psi_from_angles(th1, th2, I1, I2, I3)
        R, _, sigma = dl.solve_R(th1, I1, I2)
        lhs = dl.chi_hat2(psi, I2, I3, tau) + dl.chi2(R, I1, I2, sigma)
        assert math.remainder(lhs - th2, 2 * math.pi) == pytest.approx(0.0, abs=1e-9)


# ---------------------------------------------------------------------------
# planar transform
# ---------------------------------------------------------------------------

def test_circular_orbit():
    d = dl.delaunay_from_polar(dy.PolarState(1.0, 0.3, 0.0, 1.0))
    assert d.I1 == pytest.approx(1.0, abs=1e-15) and d.I2 == 1.0
    for th1 in np.linspace(-3, 3, 7):
        assert dl.solve_R(th1, 1.0, 1.0)[0] == pytest.approx(1.0, abs=1e-15)


def test_radius_extremes_are_turning_radii():
    I1 = 1.0
    I2 = math.sqrt(1 - 0.36)
    rm, rp = dl.turning_radii(I1, I2)
    R = [dl.solve_R(t, I1, I2)[0] for t in np.linspace(-math.pi, math.pi, 2001)]
    assert min(R) == pytest.approx(rm, abs=1e-10)
    assert max(R) == pytest.approx(rp, abs=1e-10)
    assert dl.solve_R(0.0, I1, I2)[0] == pytest.approx(rp, abs=1e-14)


elements = st.tuples(st.floats(0.6, 1.6), st.floats(0.25, 0.97), st.sampled_from([1.0, -1.0]),
                     st.floats(-3.1, 3.1), st.floats(-3.1, 3.1))


@settings(max_examples=80, deadline=None)
@given(elements)
def test_planar_round_trip(el):
    I1, frac, sgn, th1, th2 = el
    d = dl.DelaunayPlanar(I1, sgn * frac * I1, th1, th2)
    p = dl.polar_from_delaunay(d)
    d2 = dl.delaunay_from_polar(p)
    assert d2.I2 == p.pphi
    assert abs(d2.I1 - d.I1) < 1e-10 and abs(d2.I2 - d.I2) < 1e-10
    assert abs(math.remainder(d2.theta1 - th1, 2 * math.pi)) < 1e-10
    assert abs(math.remainder(d2.theta2 - th2, 2 * math.pi)) < 1e-10
    p2 = dl.polar_from_delaunay(d2)
    np.testing.assert_allclose(p2, p, atol=1e-10)


@pytest.mark.parametrize("sigma", [1, -1])
def test_branch_tag_follows_radial_momentum(sigma):
    p = dy.PolarState(1.1, 0.2, sigma * 0.3, 0.9)
    assert dl.delaunay_from_polar(p).sigma == sigma


def test_unbound_states_rejected():
    with pytest.raises(DomainError):
        dl.delaunay_from_polar(dy.PolarState(1.0, 0.0, 1.0, 1.2))
    with pytest.raises(DomainError):
        dl.delaunay_from_polar(dy.PolarState(1.0, 0.0, 0.5, 0.0))


def test_hamiltonian_in_delaunay_variables():
    rng = np.random.default_rng(3)
    for _ in range(20):
        I1 = rng.uniform(0.7, 1.5)
        d = dl.DelaunayPlanar(I1, I1 * rng.uniform(0.3, 0.95), rng.uniform(-3, 3), rng.uniform(-3, 3))
        s = dl.cart_from_delaunay(d)
        assert dy.hamiltonian_planar_expanded(s, 0.0) == pytest.approx(-0.5 / I1 ** 2 - d.I2, abs=1e-10)
        try:
            h = dy.hamiltonian_planar_expanded(s, 1e-3)
        except SingularityError:
            continue
        assert dl.hamiltonian_delaunay_planar(d, 1e-3) == pytest.approx(h, abs=1e-10)


def angle_rate(trace):
    unwrapped = np.unwrap(trace)
    return unwrapped


def test_unperturbed_frequencies_planar():
    d0 = dl.DelaunayPlanar(1.1, 0.8, 0.4, -1.0)
    s0 = dl.cart_from_delaunay(d0)
    ts = np.linspace(0.0, 12.0, 25)
    traj = dy.propagate(lambda y: dy.planar_field_expanded(y, 0.0), s0, (0.0, 12.0), 1e-13, t_eval=ts)
    els = [dl.delaunay_from_cart(y) for y in traj.y]
    th1 = np.unwrap([d.theta1 for d in els])
    th2 = np.unwrap([d.theta2 for d in els])
    np.testing.assert_allclose([d.I1 for d in els], 1.1, atol=1e-10)
    np.testing.assert_allclose(th1 - th1[0], ts / 1.1 ** 3, atol=1e-8)
    np.testing.assert_allclose(th2 - th2[0], -ts, atol=1e-8)


def test_unperturbed_frequencies_spatial():
    d0 = dl.DelaunaySpatial(1.1, 0.8, 0.5, 0.4, -1.0, 0.7)
    s0 = dl.cart_from_delaunay_spatial(d0)
    ts = np.linspace(0.0, 12.0, 25)
    traj = dy.propagate(lambda y: dy.spatial_field_expanded(y, 0.0), s0, (0.0, 12.0), 1e-13, t_eval=ts)
    els = [dl.delaunay_spatial_from_cart(y) for y in traj.y]
    th = [np.unwrap([d[k] for d in els]) for k in (3, 4, 5)]
    np.testing.assert_allclose(th[0] - th[0][0], ts / 1.1 ** 3, atol=1e-8)
    np.testing.assert_allclose(th[1] - th[1][0], 0.0, atol=1e-8)
    np.testing.assert_allclose(th[2] - th[2][0], -ts, atol=1e-8)


# ---------------------------------------------------------------------------
# spatial transform
# ---------------------------------------------------------------------------

spatial_elements = st.tuples(st.floats(0.6, 1.6), st.floats(0.3, 0.95), st.floats(0.15, 0.95),
                             st.sampled_from([1.0, -1.0]), st.floats(-3.1, 3.1), st.floats(-3.1, 3.1),
                             st.floats(-3.1, 3.1))


@settings(max_examples=80, deadline=None)
@given(spatial_elements)
def test_spatial_round_trip(el):
    I1, f2, f3, sgn, th1, th2, th3 = el
    I2 = f2 * I1
    d = dl.DelaunaySpatial(I1, I2, sgn * f3 * I2, th1, th2, th3)
    p = dl.spherical_from_delaunay(d)
    assume(math.sin(p.psi) > 1e-3)
    d2 = dl.delaunay_from_spherical(p)
    for a, b in zip(d2[:3], d[:3]):
        assert abs(a - b) < 1e-10
    for a, b in zip(d2[3:6], d[3:6]):
        assert abs(math.remainder(a - b, 2 * math.pi)) < 1e-10


def test_spatial_planar_slice_collapses():
    d = dl.DelaunaySpatial(1.2, 0.9, 0.9, 0.7, 0.4, -1.1)
    p = dl.spherical_from_delaunay(d)
    assert p.psi == math.pi / 2 and p.ppsi == 0.0
    planar = dl.polar_from_delaunay((1.2, 0.9, 0.7, 0.4 - 1.1))
    assert p.r == pytest.approx(planar.r, abs=1e-14)
    assert math.remainder(p.phi - planar.phi, 2 * math.pi) == pytest.approx(0.0, abs=1e-14)
    back = dl.delaunay_from_spherical(p)
    assert back.theta2 == 0.0
    assert math.remainder(back.theta3 - (0.4 - 1.1), 2 * math.pi) == pytest.approx(0.0, abs=1e-12)


def test_spatial_hamiltonian():
    d = dl.DelaunaySpatial(1.2, 0.9, 0.4, 0.7, 0.4, -1.1)
    s = dl.cart_from_delaunay_spatial(d)
    assert dy.hamiltonian_spatial_expanded(s, 0.0) == pytest.approx(-0.5 / 1.44 - 0.4, abs=1e-12)
    assert dl.hamiltonian_delaunay_spatial(d, 1e-3) == pytest.approx(dy.hamiltonian_spatial_expanded(s, 1e-3), abs=1e-12)


# ---------------------------------------------------------------------------
# h1
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("e", [0.3, 0.6, 0.9])
def test_h1_transcribed_matches_chain_rule_and_cartesian(e):
    for I1, I2, th1, th2 in torus_grid(16, 1.1, e):
        a = dl.h1_planar(I1, I2, th1, th2)
        b = dl.h1_planar_chain(I1, I2, th1, th2)
        c = dl.action_drift_cartesian(np.array(dl.cart_from_delaunay((I1, I2, th1, th2))))
        scale = max(1.0, abs(b))
        assert abs(a - b) < 1e-8 * scale
        assert abs(a - c) < 1e-10 * scale


def test_h1_retrograde():
    for I1, I2, th1, th2 in torus_grid(8, 1.1, 0.5):
        a = dl.h1_planar(I1, -I2, th1, th2)
        c = dl.action_drift_cartesian(np.array(dl.cart_from_delaunay((I1, -I2, th1, th2))))
        assert a == pytest.approx(c, rel=1e-10, abs=1e-12)


def test_h1_against_exact_flow():
    for d in torus_grid(6, 1.0, 0.6):
        rate, mid = fd_action_drift(np.array(dl.cart_from_delaunay(d)))
        dm = dl.delaunay_from_cart(mid)
        h = dl.h1_planar(dm.I1, dm.I2, dm.theta1, dm.theta2)
        assert rate == pytest.approx(h, rel=1e-3)


def test_h1_singular_at_secondary():
    # circular orbit of radius 1 passes through the secondary when phi = 0
    with pytest.raises(SingularityError):
        dl.h1_planar(1.0, 1.0, 0.0, 0.0)


def test_h1_keplerian_term_has_zero_mean():
    I1, I2 = 1.0, 0.8
    th = np.linspace(-math.pi, math.pi, 256, endpoint=False)
    vals = [dl.dR_dtheta1(t, I1, I2) / dl.solve_R(t, I1, I2)[0] ** 2 for t in th]
    assert abs(np.mean(vals)) < 1e-8


def test_h1_spatial_equals_planar_on_slice():
    I1, I2 = 1.1, 0.85
    for th1 in np.linspace(-3.0, 3.0, 7):
        for th3 in np.linspace(-3.0, 3.0, 7):
            a = dl.h1_spatial(I1, I2, I2, th1, 0.0, th3)
            b = dl.h1_planar(I1, I2, th1, th3)
            assert abs(a - b) < 1e-10 * max(1.0, abs(b))


def test_h1_spatial_routes_agree():
    rng = np.random.default_rng(7)
    for _ in range(12):
        I1 = rng.uniform(0.8, 1.4)
        I2 = I1 * rng.uniform(0.4, 0.95)
        I3 = rng.choice([-1, 1]) * I2 * rng.uniform(0.2, 0.9)
        d = (I1, I2, I3, *rng.uniform(-3, 3, 3))
        a = dl.h1_spatial(*d)
        b = dl.h1_spatial_chain(*d)
        c = dl.action_drift_cartesian(np.array(dl.cart_from_delaunay_spatial(d)))
        assert abs(a - c) < 1e-10 * max(1.0, abs(c))
        assert abs(a - b) < 1e-8 * max(1.0, abs(c))


def test_h1_spatial_against_exact_flow():
    d = (1.0, 0.8, 0.5, 0.9, 0.4, -0.6)
    rate, mid = fd_action_drift(np.array(dl.cart_from_delaunay_spatial(d)), spatial=True)
    dm = dl.delaunay_spatial_from_cart(mid)
    assert rate == pytest.approx(dl.h1_spatial(*dm[:6]), rel=1e-3)


# ---------------------------------------------------------------------------
# symplectic audit
# ---------------------------------------------------------------------------

def test_identity_audit_is_exact():
    a = dl.symplectic_audit(lambda x: list(x), [0.25, 0.125, -0.5, 0.75], h=2.0 ** -20)
    assert a.residual == 0.0


def test_cart_to_polar_audit():
    a = dl.symplectic_audit(dl.cart_to_polar_map, [0.8, -0.4, 0.3, 0.9], angle_outputs=(1,))
    assert a.residual < 1e-8


def test_delaunay_audit_at_random_points():
    rng = np.random.default_rng(11)
    guard = dl.turning_point_guard(1e-3, momenta=(2,))
    n = 0
    while n < 20:
        I1 = rng.uniform(0.7, 1.5)
        d = dl.DelaunayPlanar(I1, rng.choice([-1, 1]) * I1 * rng.uniform(0.3, 0.95),
                              rng.uniform(-3, 3), rng.uniform(-3, 3))
        p = dl.polar_from_delaunay(d)
        a = dl.symplectic_audit(dl.polar_to_delaunay_map, p, angle_outputs=(0, 1), guard=guard)
        if a.flagged:
            continue
        assert a.residual < 1e-6
        n += 1


def test_audit_flags_turning_points_and_serialises():
    p = dl.polar_from_delaunay((1.0, 0.8, 0.0, 0.3))
    a = dl.symplectic_audit(dl.polar_to_delaunay_map, p, angle_outputs=(0, 1),
                            guard=dl.turning_point_guard(1e-3, momenta=(2,)))
    assert a.flagged and math.isnan(a.residual)
    good = dl.symplectic_audit(dl.cart_to_polar_map, [0.8, -0.4, 0.3, 0.9], angle_outputs=(1,))
    doc = json.loads(json.dumps(good.to_dict()))
    assert len(doc["jacobian"]) == 4 and doc["flagged"] is False


def test_flipped_branch_breaks_symplecticity():
    p = dl.polar_from_delaunay((1.0, 0.8, 1.0, 0.3))
    a = dl.symplectic_audit(lambda x: dl.polar_to_delaunay_map(x, flip_branch=True), p, angle_outputs=(0, 1))
    assert a.residual > 1e-3
