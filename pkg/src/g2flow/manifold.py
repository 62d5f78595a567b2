"""Tensor fields on a flat periodic 7-torus with symmetry reduction.

Fields live on a grid over 1..3 active axes and are constant along the
remaining axes, so every partial derivative along an inactive axis is exactly
zero.  Arrays are laid out with the grid axes leading and tensor/component
axes trailing; all seven coordinate directions are always present in tensor
indices.  Derivatives use 4th-order central stencils on the periodic grid,
grouped so that they vanish exactly on constant fields.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .algebra import (
    COUNT,
    DIM,
    POS,
    TUPLES,
    hodge_star,
    induced_metric,
    raise_all_indices,
    tensor_norm_sq,
    to_dense,
)
from .errors import MetricNotPositiveError, RankOverflowError

_LETTERS = "bcdefgh"


@dataclass(frozen=True)
class Grid:
    """Flat periodic grid over a subset of the 7 coordinate axes.

    axes           active axis ids (0-based, strictly increasing, 1..3 of them)
    shape          points per active axis, each >= 4
    lengths        period per active axis
    inactive_period  measure factor contributed by each inactive axis
    """

    axes: tuple
    shape: tuple
    lengths: tuple
    inactive_period: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(int(a) for a in self.axes))
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        object.__setattr__(self, "lengths", tuple(float(x) for x in self.lengths))
        if not 1 <= len(self.axes) <= 3:
            raise ValueError("grids support 1 to 3 active axes")
        if list(self.axes) != sorted(set(self.axes)) or not all(0 <= a < DIM for a in self.axes):
            raise ValueError("active axes must be distinct ids in 0..6")
        if len(self.shape) != len(self.axes) or len(self.lengths) != len(self.axes):
            raise ValueError("shape and lengths must match the active axes")
        if any(n < 4 for n in self.shape):
            raise ValueError("need at least 4 points per active axis")
        if any(x <= 0 for x in self.lengths) or self.inactive_period <= 0:
            raise ValueError("periods must be positive")

    @property
    def ndim_active(self):
        return len(self.axes)

    @property
    def spacings(self):
        return tuple(x / n for x, n in zip(self.lengths, self.shape))

    @property
    def npoints(self):
        return int(np.prod(self.shape))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacings))

    @property
    def inactive_measure(self):
        return self.inactive_period ** (DIM - len(self.axes))

    def coordinate(self, axis):
        """1-D coordinate array of an active axis (left cell edges)."""
        i = self.axes.index(axis)
        return np.arange(self.shape[i]) * self.spacings[i]

    def meshes(self):
        """Coordinate meshes over the grid, one per active axis (ij indexing)."""
        axes_1d = [self.coordinate(a) for a in self.axes]
        return np.meshgrid(*axes_1d, indexing="ij")


# antisymmetric / symmetric central weights, indexed by half-width offset 1..
_D1_WEIGHTS = {4: (8.0 / 12.0, -1.0 / 12.0), 8: (4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0)}
_D2_WEIGHTS = {4: (16.0 / 12.0, -1.0 / 12.0), 8: (8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0)}


def partial(grid, values, axis, order=1, accuracy=4):
    """Periodic central difference along a global axis.

    Inactive axes give exactly zero.  Stencils are grouped as differences of
    shifted copies so constant fields differentiate to exact floating-point
    zero.  ``accuracy`` is the formal order of the stencil (4 or 8); the
    8th-order variant backs the torsion extraction, everything else runs at 4.
    """
    values = np.asarray(values, dtype=float)
    if axis not in grid.axes:
        return np.zeros_like(values)
    ax = grid.axes.index(axis)
    if grid.shape[ax] < accuracy + 1:
        raise ValueError(f"accuracy-{accuracy} stencil needs at least {accuracy + 1} points")
    h = grid.spacings[ax]
    if order == 1:
        weights = _D1_WEIGHTS[accuracy]
        out = np.zeros_like(values)
        for s, w in enumerate(weights, start=1):
            out += w * (np.roll(values, -s, axis=ax) - np.roll(values, s, axis=ax))
        return out / h
    if order == 2:
        weights = _D2_WEIGHTS[accuracy]
        out = np.zeros_like(values)
        for s, w in enumerate(weights, start=1):
            out += w * (
                (np.roll(values, -s, axis=ax) - values) + (np.roll(values, s, axis=ax) - values)
            )
        return out / (h * h)
    raise ValueError("order must be 1 or 2")


def gradient(grid, values, accuracy=4):
    """Stack of coordinate derivatives; the new axis sits before the tensor axes."""
    derivs = [partial(grid, values, a, 1, accuracy=accuracy) for a in range(DIM)]
    return np.stack(derivs, axis=len(grid.shape))


@dataclass
class CurvatureBundle:
    """Levi-Civita data of a metric field.

    christoffel   Gamma^k_ij, axes (k, i, j)
    riemann       R_ijkl, all indices lowered
    ricci         Ric_jk = R_ijk^i (symmetrized to machine precision)
    scalar        g^{jk} Ric_jk
    """

    christoffel: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray
    scalar: np.ndarray


def check_positive_metric(grid, g):
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        eig = np.linalg.eigvalsh(g)
        bad = np.argwhere(eig[..., 0] <= 0.0)
        point = tuple(int(i) for i in bad[0]) if bad.size else None
        raise MetricNotPositiveError("metric not positive definite", point=point) from None


def christoffel_symbols(grid, g, ginv=None, accuracy=4):
    """Gamma^k_ij = (1/2) g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)."""
    if ginv is None:
        ginv = np.linalg.inv(np.asarray(g, dtype=float))
    dg = gradient(grid, g, accuracy=accuracy)  # (..., a, i, j) = d_a g_ij
    t1 = np.einsum("...kl,...ijl->...kij", ginv, dg)
    t2 = np.einsum("...kl,...jil->...kij", ginv, dg)
    t3 = np.einsum("...kl,...lij->...kij", ginv, dg)
    return 0.5 * (t1 + t2 - t3)


def levi_civita(grid, g):
    """Christoffel symbols and curvature of a metric field.

    Gamma^k_ij = (1/2) g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)
    R_ijk^l    = d_i Gamma^l_jk - d_j Gamma^l_ik
                 + Gamma^l_ip Gamma^p_jk - Gamma^l_jp Gamma^p_ik
    Ric_jk     = R_ijk^i   (round spheres come out with positive scalar curvature)
    """
    g = np.asarray(g, dtype=float)
    check_positive_metric(grid, g)
    ginv = np.linalg.inv(g)
    gamma = christoffel_symbols(grid, g, ginv=ginv)

    dgamma = gradient(grid, gamma)  # (..., a, k, i, j) = d_a Gamma^k_ij
    term1 = np.einsum("...iljk->...ijkl", dgamma)
    term2 = np.einsum("...jlik->...ijkl", dgamma)
    term3 = np.einsum("...lip,...pjk->...ijkl", gamma, gamma)
    term4 = np.einsum("...ljp,...pik->...ijkl", gamma, gamma)
    rm_mixed = term1 - term2 + term3 - term4  # R_ijk^l

    ricci = np.einsum("...ijki->...jk", rm_mixed)
    ricci = 0.5 * (ricci + np.einsum("...jk->...kj", ricci))
    scalar = np.einsum("...jk,...jk->...", ginv, ricci)
    riemann = np.einsum("...ijkp,...pl->...ijkl", rm_mixed, g)
    return CurvatureBundle(christoffel=gamma, riemann=riemann, ricci=ricci, scalar=scalar)


def covariant_derivative(grid, tensor, rank, christoffel, accuracy=4):
    """Levi-Civita derivative of an all-lower tensor; new index comes first."""
    tensor = np.asarray(tensor, dtype=float)
    out = gradient(grid, tensor, accuracy=accuracy)
    letters = _LETTERS[:rank]
    for m in range(rank):
        src = letters[:m] + "p" + letters[m + 1:]
        out = out - np.einsum(f"...pa{letters[m]},...{src}->...a{letters}", christoffel, tensor)
    return out


def torsion_accuracy(grid):
    """Stencil accuracy used on the torsion-extraction path (8 where possible)."""
    return 8 if min(grid.shape) >= 9 else 4


def torsion_from_phi(grid, phi, induced=None, psi=None):
    """Full torsion T_ab of a positive 3-form field, both indices lowered.

    Inverts nabla_a phi_bcd = T_a^e psi_ebcd through the contraction
    T_a^e = (1/24) (nabla_a phi_bcd) psi^{ebcd}, using psi.psi = 24 g.

    The derivative and its Christoffel correction run on matched 8th-order
    stencils: the reconstruction residual |nabla phi - T psi| measures the
    out-of-image part of the stencil error through the nonlinear metric map,
    and 4th order is an order of magnitude too loose for the round-trip
    contract at desk resolutions.
    """
    if induced is None:
        induced = induced_metric(phi)
    g = induced.metric
    ginv = np.linalg.inv(g)
    if psi is None:
        psi = hodge_star(phi, 3, g)
    acc = torsion_accuracy(grid)
    gamma = christoffel_symbols(grid, g, ginv=ginv, accuracy=acc)
    dphi = covariant_derivative(grid, to_dense(phi, 3), 3, gamma, accuracy=acc)
    psi_up = raise_all_indices(to_dense(psi, 4), 4, ginv)
    t_mixed = np.einsum("...abcd,...ebcd->...ae", dphi, psi_up) / 24.0
    return np.einsum("...ae,...eb->...ab", t_mixed, g)


def torsion_roundtrip_residual(grid, phi):
    """Relative sup-norm residual |nabla phi - T psi| / |nabla phi|.

    Both sides are built on the torsion path's matched stencils, so this is
    exactly the quantity the reconstruction contract bounds.
    """
    induced = induced_metric(phi)
    g = induced.metric
    ginv = np.linalg.inv(g)
    psi = hodge_star(phi, 3, g)
    acc = torsion_accuracy(grid)
    gamma = christoffel_symbols(grid, g, ginv=ginv, accuracy=acc)
    dphi = covariant_derivative(grid, to_dense(phi, 3), 3, gamma, accuracy=acc)
    torsion = torsion_from_phi(grid, phi, induced=induced, psi=psi)
    t_mixed = np.einsum("...ae,...eb->...ab", torsion, ginv)
    recon = np.einsum("...ae,...ebcd->...abcd", t_mixed, to_dense(psi, 4))
    num = np.sqrt(np.max(tensor_norm_sq(dphi - recon, 4, ginv)))
    den = np.sqrt(np.max(tensor_norm_sq(dphi, 4, ginv)))
    return num / den


@lru_cache(maxsize=None)
def _d_table(k):
    by_axis = {ax: ([], [], []) for ax in range(DIM)}
    for q, c in enumerate(TUPLES[k + 1]):
        for m, ax in enumerate(c):
            rest = c[:m] + c[m + 1:]
            by_axis[ax][0].append(q)
            by_axis[ax][1].append((-1.0) ** m)
            by_axis[ax][2].append(POS[k][rest])
    return {
        ax: (np.asarray(qs), np.asarray(ss), np.asarray(srcs))
        for ax, (qs, ss, srcs) in by_axis.items()
        if qs
    }


def exterior_derivative(grid, a, k):
    """Discrete d on canonical k-form fields; d(d(.)) vanishes to rounding."""
    if k >= DIM:
        raise RankOverflowError("no 8-forms in 7 dimensions")
    a = np.asarray(a, dtype=float)
    out = np.zeros(a.shape[:-1] + (COUNT[k + 1],))
    table = _d_table(k)
    for ax in grid.axes:
        if ax not in table:
            continue
        qs, ss, srcs = table[ax]
        da = partial(grid, a, ax, 1)
        out[..., qs] += ss * da[..., srcs]
    return out


def codifferential(grid, a, k, g, ginv=None, det=None, validate=True):
    """Standard codifferential delta = (-1)^k * d * on k-forms (n = 7)."""
    if k == 0:
        return np.zeros(np.asarray(a).shape[:-1] + (0,))
    s = hodge_star(a, k, g, ginv=ginv, det=det, validate=validate)
    ds = exterior_derivative(grid, s, DIM - k)
    sds = hodge_star(ds, DIM - k + 1, g, ginv=ginv, det=det, validate=False)
    return sds if k % 2 == 0 else -sds


def hodge_laplacian(grid, a, k, g, ginv=None, det=None, validate=True):
    """Form Laplacian with the analyst sign: on functions it is the
    negative-spectrum Laplace-Beltrami operator (sin -> -(2 pi/L)^2 sin).

    Equals -(d delta + delta d) with the standard codifferential.
    """
    g = np.asarray(g, dtype=float)
    if validate:
        check_positive_metric(grid, g)
    if ginv is None:
        ginv = np.linalg.inv(g)
    if det is None:
        det = np.linalg.det(g)
    total = np.zeros(np.asarray(a, dtype=float).shape)
    if k < DIM:
        da = exterior_derivative(grid, a, k)
        total = total + codifferential(grid, da, k + 1, g, ginv=ginv, det=det, validate=False)
    if k > 0:
        ca = codifferential(grid, a, k, g, ginv=ginv, det=det, validate=False)
        total = total + exterior_derivative(grid, ca, k - 1)
    return -total


def sup_norm(grid, tensor, rank, g):
    """Sup over grid points of the all-lowered tensor norm |a|_g."""
    ginv = np.linalg.inv(np.asarray(g, dtype=float))
    return float(np.sqrt(np.max(tensor_norm_sq(tensor, rank, ginv))))


def form_sup_norm(grid, a, k, g):
    """Sup norm of a canonical k-form field in the tensor convention."""
    return sup_norm(grid, to_dense(a, k), k, g)


def integral(grid, f, g=None, sqrt_detg=None):
    """Integral of a scalar field against the Riemannian measure.

    Inactive axes contribute grid.inactive_period each; pass either the
    metric field or a precomputed density.
    """
    if sqrt_detg is None:
        sqrt_detg = 1.0 if g is None else np.sqrt(np.linalg.det(np.asarray(g, dtype=float)))
    total = np.sum(np.asarray(f, dtype=float) * sqrt_detg)
    return float(total * grid.cell_volume * grid.inactive_measure)


def laplace_beltrami(grid, f, ginv, sqrt_detg):
    """Scalar Laplace-Beltrami operator in divergence form (negative spectrum)."""
    flux = []
    for i in range(DIM):
        acc = np.zeros_like(np.asarray(f, dtype=float))
        for j in grid.axes:
            acc = acc + ginv[..., i, j] * partial(grid, f, j, 1)
        flux.append(sqrt_detg * acc)
    div = np.zeros_like(np.asarray(f, dtype=float))
    for i in grid.axes:
        div = div + partial(grid, flux[i], i, 1)
    return div / sqrt_detg


def scalar_gradient_norm_sq(grid, f, ginv):
    """|grad f|^2_g for a scalar field."""
    df = [partial(grid, f, a, 1) for a in range(DIM)]
    out = np.zeros_like(np.asarray(f, dtype=float))
    for i in grid.axes:
        for j in grid.axes:
            out = out + ginv[..., i, j] * df[i] * df[j]
    return out


def covariant_hessian(grid, f, christoffel):
    """Covariant Hessian of a scalar: f_ij = d_i d_j f - Gamma^p_ij d_p f."""
    df = gradient(grid, f)  # (..., a)
    rows = []
    for i in range(DIM):
        rows.append(np.stack([partial(grid, df[..., j], i, 1) for j in range(DIM)], axis=-1))
    hess = np.stack(rows, axis=-2)
    # periodic stencils commute; symmetrize away the last rounding bits
    hess = 0.5 * (hess + np.einsum("...ij->...ji", hess))
    corr = np.einsum("...pij,...p->...ij", christoffel, df)
    return hess - corr
