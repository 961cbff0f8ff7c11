"""Independent numerical oracles shared by the test modules."""

import math

import numpy as np

from cr3bp_melnikov import delaunay as dl
from cr3bp_melnikov import dynamics as dy


def fd_action_drift(state, mu=1e-6, dt=1e-3, spatial=False):
    """``(I1(dt) - I1(0)) / (mu dt)`` along the exact flow, and the midpoint state.

    The midpoint is taken on the unperturbed flow, where a central
    difference of the action is second-order accurate.
    """
    field = dy.spatial_field_exact if spatial else dy.planar_field_exact
    action = lambda s: (-2.0 * dy.kepler_energy(np.asarray(s))) ** -0.5
    end = dy.propagate(lambda y: field(y, mu), state, (0.0, dt), 1e-13, t_eval=[dt]).y[-1]
    mid = dy.propagate(lambda y: field(y, 0.0), state, (0.0, 0.5 * dt), 1e-13, t_eval=[0.5 * dt]).y[-1]
    return (action(end) - action(state)) / (mu * dt), mid


def torus_grid(n=16, I1=1.0, e=0.6):
    """``n`` planar Delaunay points on the torus ``(I1, I1 sqrt(1 - e^2))``."""
    I2 = I1 * math.sqrt(1 - e * e)
    pts = []
    for j in range(n):
        th1 = -math.pi + 2 * math.pi * (j + 0.5) / n
        th2 = 2 * math.pi * ((5 * j) % n) / n + 0.3
        pts.append((I1, I2, th1, th2))
    return pts
