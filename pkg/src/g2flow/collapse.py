"""Geodesic balls, their volumes, and the non-collapsing check.

Distances are shortest paths on the grid graph with one edge per active-axis
offset in {-1,0,1}^k (8 neighbours for two active axes), each edge weighted
by the metric length of the straight segment at its midpoint.  This octile
approximation overshoots Euclidean distances by at most ~9%, which is
adequate for order-one volume-ratio checks.  A metric is kappa-non-collapsed
at scale rho when every ball of radius r < rho with sup R <= r^{-2} has
volume at least kappa r^7.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.csgraph

from .errors import NoAdmissibleBallsError, UnresolvableRadiusError
from .manifold import check_positive_metric, levi_civita


def _half_offsets(k):
    """One representative per +/- offset pair over the active axes."""
    out = []
    for off in itertools.product((-1, 0, 1), repeat=k):
        if all(o == 0 for o in off):
            continue
        first = next(o for o in off if o != 0)
        if first > 0:
            out.append(off)
    return out


def build_metric_graph(grid, g):
    """Sparse symmetric graph of midpoint-metric edge lengths."""
    g = np.asarray(g, dtype=float)
    check_positive_metric(grid, g)
    npts = grid.npoints
    idx = np.arange(npts).reshape(grid.shape)
    rows, cols, data = [], [], []
    for off in _half_offsets(len(grid.axes)):
        shifted = idx
        g_nb = g
        for ax_local, o in enumerate(off):
            if o:
                shifted = np.roll(shifted, -o, axis=ax_local)
                g_nb = np.roll(g_nb, -o, axis=ax_local)
        vec = np.zeros(7)
        for ax_local, o in enumerate(off):
            vec[grid.axes[ax_local]] = o * grid.spacings[ax_local]
        g_mid = 0.5 * (g + g_nb)
        length = np.sqrt(np.einsum("i,...ij,j->...", vec, g_mid, vec))
        rows.append(idx.ravel())
        cols.append(shifted.ravel())
        data.append(length.ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    data = np.concatenate(data)
    return scipy.sparse.csr_matrix((data, (rows, cols)), shape=(npts, npts))


def geodesic_distance(grid, g, p, graph=None):
    """Grid-graph distance field from the point with multi-index ``p``.

    Inactive axes contribute zero distance (fields are constant there).
    """
    if graph is None:
        graph = build_metric_graph(grid, g)
    source = int(np.ravel_multi_index(tuple(p), grid.shape))
    dist = scipy.sparse.csgraph.dijkstra(graph, directed=False, indices=source)
    return dist.reshape(grid.shape)


def resolvable_radius(grid):
    return 2.0 * max(grid.spacings)


def ball_volume(grid, g, p, r, distances=None, sqrt_detg=None):
    """Riemannian volume of the ball of radius r about p.

    Sums sqrt(det g) over points with distance < r; inactive axes contribute
    their period factors, so the result is a 7-dimensional volume.
    """
    if r <= resolvable_radius(grid):
        raise UnresolvableRadiusError(f"radius {r} below resolvable scale {resolvable_radius(grid)}")
    if distances is None:
        distances = geodesic_distance(grid, g, p)
    if sqrt_detg is None:
        sqrt_detg = np.sqrt(np.linalg.det(np.asarray(g, dtype=float)))
    inside = distances < r
    return float(np.sum(sqrt_detg[inside]) * grid.cell_volume * grid.inactive_measure)


@dataclass
class BallReport:
    center: tuple
    center_index: int
    r: float
    sup_r_in_ball: float
    volume: float
    ratio: float
    admissible: bool


@dataclass
class KappaReport:
    worst: BallReport
    kappa_observed: float
    reports: list
    inadmissible_count: int


def sample_centers(grid, stride=4):
    axes_points = [range(0, n, max(1, stride)) for n in grid.shape]
    return [tuple(p) for p in itertools.product(*axes_points)]


def kappa_check(grid, g, rho, stride=4, scalar=None):
    """Sweep sampled centers and dyadic radii; report the worst volume ratio.

    A ball B(p, r) is admissible when sup_B R <= r^{-2}; kappa_observed is
    the smallest Vol/r^7 over admissible balls.  Raises when rho is below the
    resolvable scale or when no admissible ball exists.
    """
    g = np.asarray(g, dtype=float)
    res = resolvable_radius(grid)
    if rho <= res:
        raise UnresolvableRadiusError(f"rho {rho} below resolvable scale {res}")
    radii = []
    r = float(rho)
    while r > res:
        radii.append(r)
        r *= 0.5
    if scalar is None:
        scalar = levi_civita(grid, g).scalar
    sqrt_detg = np.sqrt(np.linalg.det(g))
    graph = build_metric_graph(grid, g)
    centers = sample_centers(grid, stride=stride)
    source_idx = np.asarray([np.ravel_multi_index(c, grid.shape) for c in centers])
    dist = scipy.sparse.csgraph.dijkstra(graph, directed=False, indices=source_idx)

    reports = []
    inadmissible = 0
    flat_scalar = np.asarray(scalar).ravel()
    flat_density = np.asarray(sqrt_detg).ravel()
    measure = grid.cell_volume * grid.inactive_measure
    for c_pos, center in enumerate(centers):
        drow = dist[c_pos]
        for r in radii:
            inside = drow < r
            sup_r_ball = float(np.max(flat_scalar[inside]))
            volume = float(np.sum(flat_density[inside]) * measure)
            admissible = sup_r_ball <= 1.0 / (r * r)
            if not admissible:
                inadmissible += 1
            reports.append(
                BallReport(
                    center=center,
                    center_index=int(source_idx[c_pos]),
                    r=r,
                    sup_r_in_ball=sup_r_ball,
                    volume=volume,
                    ratio=volume / r**7,
                    admissible=admissible,
                )
            )
    admissible_reports = [b for b in reports if b.admissible]
    if not admissible_reports:
        raise NoAdmissibleBallsError("every sampled ball violates the curvature bound")
    worst = min(admissible_reports, key=lambda b: (b.ratio, b.center_index, -b.r))
    return KappaReport(
        worst=worst,
        kappa_observed=worst.ratio,
        reports=reports,
        inadmissible_count=inadmissible,
    )
