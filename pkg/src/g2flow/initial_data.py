"""Initial-data families for flow experiments on the periodic 7-torus.

The conformal bump deforms the model structure through the cube-scaling
channel, phi = (1 + eps u)^3 phi0 with u a product of sinusoids, which gives
closed-form metric (1 + eps u)^2 delta and tunable torsion.  The closed and
co-closed bumps add an exact discrete differential instead, so dphi (resp.
dpsi) vanishes to rounding; the named flows preserve those classes and their
metric-velocity identities hold on them.
"""

from __future__ import annotations

import numpy as np

from .algebra import basis_form, standard_phi, standard_psi
from .manifold import Grid, exterior_derivative


def mode_profile(grid, modes, phase=0.0):
    """Product of sinusoids over the active axes, one mode number each."""
    meshes = grid.meshes()
    u = np.ones(grid.shape)
    for mesh, m, length in zip(meshes, modes, grid.lengths):
        u = u * np.sin(2.0 * np.pi * m * mesh / length + phase)
    return u


def _broadcast(grid, comps):
    return np.broadcast_to(comps, grid.shape + comps.shape).copy()


def flat_phi(grid):
    """The torsion-free model 3-form, constant over the grid."""
    return _broadcast(grid, standard_phi())


def flat_psi(grid):
    return _broadcast(grid, standard_psi())


def conformal_bump_phi(grid, eps, modes=None):
    """phi = (1 + eps u)^3 phi0; induced metric (1 + eps u)^2 delta."""
    modes = modes or (1,) * len(grid.axes)
    u = mode_profile(grid, modes)
    return (1.0 + eps * u)[..., None] ** 3 * standard_phi()


def conformal_bump_psi(grid, eps, modes=None):
    """psi = (1 + eps u)^4 psi0, the 4-form side of the same deformation."""
    modes = modes or (1,) * len(grid.axes)
    u = mode_profile(grid, modes)
    return (1.0 + eps * u)[..., None] ** 4 * standard_psi()


def closed_bump_phi(grid, eps, modes=None):
    """phi0 + eps d(beta): discretely closed initial data for the 3-form flow."""
    modes = modes or (1,) * len(grid.axes)
    u1 = mode_profile(grid, modes)
    u2 = mode_profile(grid, modes, phase=0.7)
    u3 = mode_profile(grid, modes, phase=1.9)
    beta = (
        u1[..., None] * basis_form((3, 4))
        + u2[..., None] * basis_form((5, 6))
        + u3[..., None] * basis_form((1, 2))
    )
    return flat_phi(grid) + eps * exterior_derivative(grid, beta, 2)


def coclosed_bump_psi(grid, eps, modes=None):
    """psi0 + eps d(gamma): discretely closed 4-form initial data."""
    modes = modes or (1,) * len(grid.axes)
    u1 = mode_profile(grid, modes)
    u2 = mode_profile(grid, modes, phase=1.1)
    u3 = mode_profile(grid, modes, phase=2.3)
    gamma = (
        u1[..., None] * basis_form((3, 4, 5))
        + u2[..., None] * basis_form((1, 2, 6))
        + u3[..., None] * basis_form((2, 4, 6))
    )
    return flat_psi(grid) + eps * exterior_derivative(grid, gamma, 3)
