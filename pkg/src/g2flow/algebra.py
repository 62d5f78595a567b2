"""Pointwise G2 linear algebra on the model 7-dimensional tangent space.

A k-form is stored canonically: the trailing axis of its array enumerates the
strictly increasing index tuples (i1 < ... < ik) in lexicographic order, so
antisymmetry is structural rather than numerical.  Every operation accepts
arbitrary leading axes, which lets the same kernels serve a single tangent
space and a whole grid of them.  Indices are 0-based throughout; the classical
basis form e^{123} is the triple (0, 1, 2).

All contractions go through ``np.einsum`` with the default (non-BLAS)
evaluation so results are bit-reproducible regardless of thread counts.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (
    DegenerateFormError,
    MetricNotPositiveError,
    NonConvergenceError,
    RankOverflowError,
)

DIM = 7

#: scale-invariant threshold below which the metric bilinear form counts as
#: degenerate: |det B| <= DEGENERACY_TOL * (max |B|)^7
DEGENERACY_TOL = 1e-12


def perm_sign(indices) -> int:
    """Sign of the permutation sorting ``indices``; 0 if any index repeats."""
    seq = list(indices)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] == seq[j]:
                return 0
            if seq[i] > seq[j]:
                sign = -sign
    return sign


TUPLES = {k: tuple(itertools.combinations(range(DIM), k)) for k in range(DIM + 1)}
POS = {k: {c: i for i, c in enumerate(TUPLES[k])} for k in range(DIM + 1)}
COUNT = {k: len(TUPLES[k]) for k in range(DIM + 1)}

_LETTERS = "abcdefg"


def _flat_index(perm):
    flat = 0
    for i in perm:
        flat = flat * DIM + i
    return flat


@lru_cache(maxsize=None)
def _dense_tables(k):
    pos, src, sgn = [], [], []
    for p, c in enumerate(TUPLES[k]):
        for perm in itertools.permutations(c):
            pos.append(_flat_index(perm))
            src.append(p)
            sgn.append(perm_sign(perm))
    return np.asarray(pos), np.asarray(src), np.asarray(sgn, dtype=float)


@lru_cache(maxsize=None)
def _canonical_flat(k):
    return np.asarray([_flat_index(c) for c in TUPLES[k]])


def to_dense(a, k):
    """Expand a canonical k-form into the full antisymmetric tensor."""
    a = np.asarray(a, dtype=float)
    lead = a.shape[:-1]
    if k == 0:
        return a[..., 0]
    pos, src, sgn = _dense_tables(k)
    flat = np.zeros(lead + (DIM**k,))
    flat[..., pos] = sgn * a[..., src]
    return flat.reshape(lead + (DIM,) * k)


def from_dense(d, k):
    """Collect the canonical components of an antisymmetric dense tensor."""
    d = np.asarray(d, dtype=float)
    if k == 0:
        return d[..., None]
    lead = d.shape[: d.ndim - k]
    flat = d.reshape(lead + (DIM**k,))
    return flat[..., _canonical_flat(k)].copy()


def component(a, indices):
    """Signed access a_{i1...ik} for an arbitrary (possibly unsorted) tuple."""
    k = len(indices)
    s = perm_sign(indices)
    a = np.asarray(a, dtype=float)
    if s == 0:
        return np.zeros(a.shape[:-1])
    return s * a[..., POS[k][tuple(sorted(indices))]]


def basis_vector(i):
    e = np.zeros(DIM)
    e[i] = 1.0
    return e


def basis_form(indices):
    """Canonical array of the basis form e^{i1...ik} (indices 0-based)."""
    k = len(indices)
    out = np.zeros(COUNT[k])
    s = perm_sign(indices)
    if s == 0:
        raise ValueError("repeated index in basis form")
    out[POS[k][tuple(sorted(indices))]] = s
    return out


_PHI_TERMS = (
    ((0, 1, 2), 1.0),
    ((0, 3, 4), 1.0),
    ((0, 5, 6), 1.0),
    ((1, 3, 5), 1.0),
    ((1, 4, 6), -1.0),
    ((2, 3, 6), -1.0),
    ((2, 4, 5), -1.0),
)


def standard_phi():
    """The model positive 3-form: e^{123}+e^{145}+e^{167}+e^{246}-e^{257}-e^{347}-e^{356}."""
    phi = np.zeros(COUNT[3])
    for triple, sign in _PHI_TERMS:
        phi[POS[3][triple]] = sign
    return phi


def standard_psi():
    """The model 4-form dual to ``standard_phi`` in the flat metric."""
    return flat_star(standard_phi(), 3)


@lru_cache(maxsize=None)
def _wedge_matrix(ka, kb):
    kc = ka + kb
    mat = np.zeros((COUNT[kc], COUNT[ka] * COUNT[kb]))
    for q, c in enumerate(TUPLES[kc]):
        for sub in itertools.combinations(c, ka):
            rest = tuple(i for i in c if i not in sub)
            mat[q, POS[ka][sub] * COUNT[kb] + POS[kb][rest]] = perm_sign(sub + rest)
    return mat


def wedge(a, ka, b, kb):
    """Wedge product with the determinant convention (e^1^e^2)(e1,e2) = 1."""
    if ka + kb > DIM:
        raise RankOverflowError(f"wedge of ranks {ka} and {kb} exceeds degree {DIM}")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    outer = a[..., :, None] * b[..., None, :]
    outer = outer.reshape(outer.shape[:-2] + (-1,))
    return np.einsum("...i,ci->...c", outer, _wedge_matrix(ka, kb))


def interior(u, a, k):
    """Interior product (u . a)_{i2..ik} = u^j a_{j i2..ik}."""
    if k < 1:
        raise ValueError("interior product needs a form of rank >= 1")
    ad = to_dense(a, k)
    rest = _LETTERS[: k - 1]
    contracted = np.einsum(f"...j{rest},...j->...{rest}", ad, np.asarray(u, dtype=float))
    return from_dense(contracted, k - 1)


@lru_cache(maxsize=None)
def _star_tables(k):
    src, sgn = [], []
    for cod in TUPLES[DIM - k]:
        comp = tuple(i for i in range(DIM) if i not in cod)
        src.append(POS[k][comp])
        sgn.append(perm_sign(comp + cod))
    return np.asarray(src), np.asarray(sgn, dtype=float)


def flat_star(a, k):
    """Hodge dual in the flat identity metric (purely combinatorial)."""
    a = np.asarray(a, dtype=float)
    src, sgn = _star_tables(k)
    return a[..., src] * sgn


def _cholesky_or_raise(g, what="metric"):
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        eig = np.linalg.eigvalsh(g)
        bad = np.argwhere(eig[..., 0] <= 0.0)
        point = tuple(bad[0]) if bad.size else None
        raise MetricNotPositiveError(f"{what} not positive definite", point=point) from None


def raise_all_indices(dense, rank, ginv):
    """Raise every index of an all-lower dense tensor with g^{-1}."""
    out = np.asarray(dense, dtype=float)
    ginv = np.asarray(ginv, dtype=float)
    # broadcast g^{-1} across the rank-1 spectator tensor axes
    gexp = ginv.reshape(ginv.shape[:-2] + (1,) * (rank - 1) + ginv.shape[-2:])
    for i in range(rank):
        out = np.moveaxis(out, -rank + i, -1)
        out = np.einsum("...ab,...b->...a", gexp, out)
        out = np.moveaxis(out, -1, -rank + i)
    return out


def tensor_norm_sq(t, rank, ginv):
    """|t|^2 with every index lowered, contracted through g^{-1}."""
    raised = raise_all_indices(t, rank, ginv)
    out = np.asarray(t, dtype=float) * raised
    for _ in range(rank):
        out = out.sum(axis=-1)
    return out


def form_norm_sq(a, k, ginv):
    """Tensor-convention squared norm of a canonical k-form (|phi|^2 = 42)."""
    return tensor_norm_sq(to_dense(a, k), k, ginv)


def metric_bilinear(phi):
    """B_ij = (1/6) (e_i . phi) ^ (e_j . phi) ^ phi against the unit 7-volume.

    Evaluates to (1/24) phi_{ikl} phi_{jmn} (flat-dual phi)_{klmn}.
    """
    phid = to_dense(phi, 3)
    psid = to_dense(flat_star(phi, 3), 4)
    t = np.einsum("...ikl,...klmn->...imn", phid, psid)
    return np.einsum("...imn,...jmn->...ij", t, phid) / 24.0


@dataclass(frozen=True)
class InducedMetric:
    """Metric data induced by a positive 3-form."""

    metric: np.ndarray   # g_ij, unit-determinant normalization of B
    volume: np.ndarray   # sqrt(det g), the Riemannian density
    orientation: float   # +1, or -1 when B was negative definite


def induced_metric(phi) -> InducedMetric:
    """Invert g(u,v) Vol_g = (1/6)(u.phi)^(v.phi)^phi via g = B / (det B)^{1/9}.

    det B = (det g)^{9/2}, so the volume density is (det B)^{1/9}.  A 3-form
    whose B is negative definite induces the metric of the opposite
    orientation; the flip is recorded, not silently fixed.
    """
    bil = metric_bilinear(phi)
    det = np.linalg.det(bil)
    scale = np.max(np.abs(bil), axis=(-2, -1))
    if np.any(np.abs(det) <= DEGENERACY_TOL * scale**DIM):
        raise DegenerateFormError("3-form does not induce a definite bilinear form")
    orientation = 1.0
    if np.all(det < 0.0):
        bil = -bil
        det = -det
        orientation = -1.0
    elif np.any(det < 0.0):
        raise DegenerateFormError("mixed orientation across points")
    _cholesky_or_raise(bil, what="induced bilinear form")
    ninth = det ** (1.0 / 9.0)
    metric = bil / ninth[..., None, None]
    return InducedMetric(metric=metric, volume=ninth, orientation=orientation)


def g2_check(phi):
    """Classify a 3-form as ``positive``, ``degenerate`` or ``negative``.

    Positive means the bilinear form B is positive definite (the open
    GL(7)-orbit of the model form with the standard orientation).
    """
    bil = metric_bilinear(phi)
    det = np.linalg.det(bil)
    scale = np.max(np.abs(bil), axis=(-2, -1))
    eig = np.linalg.eigvalsh(bil)
    degenerate = np.abs(det) <= DEGENERACY_TOL * scale**DIM
    positive = np.all(eig > 0.0, axis=-1) & ~degenerate
    negative = np.all(eig < 0.0, axis=-1) & ~degenerate
    out = np.where(positive, "positive", np.where(negative, "negative", "degenerate"))
    if out.shape == ():
        return str(out)
    return out


@lru_cache(maxsize=None)
def _minor_star_tables(k):
    m = DIM - k
    rows = np.asarray([[i for i in range(DIM) if i not in c] for c in TUPLES[k]])
    cols = np.asarray([list(j) for j in TUPLES[m]])
    eps = np.asarray([perm_sign(c + tuple(i for i in range(DIM) if i not in c)) for c in TUPLES[k]], dtype=float)
    return rows, cols, eps


def _small_det(mat, m):
    if m == 1:
        return mat[..., 0, 0]
    if m == 2:
        return mat[..., 0, 0] * mat[..., 1, 1] - mat[..., 0, 1] * mat[..., 1, 0]
    # m == 3
    return (
        mat[..., 0, 0] * (mat[..., 1, 1] * mat[..., 2, 2] - mat[..., 1, 2] * mat[..., 2, 1])
        - mat[..., 0, 1] * (mat[..., 1, 0] * mat[..., 2, 2] - mat[..., 1, 2] * mat[..., 2, 0])
        + mat[..., 0, 2] * (mat[..., 1, 0] * mat[..., 2, 1] - mat[..., 1, 1] * mat[..., 2, 0])
    )


def _star_high_rank(a, k, g, sq):
    """Star on k >= 4 via complementary minors of g (Jacobi's identity):
    (*a)_J = (1/sqrt(det g)) sum_C eps(C) det(g[C^c, J]) a_C."""
    rows, cols, eps = _minor_star_tables(k)
    m = DIM - k
    minors = _small_det(g[..., rows[:, None, :, None], cols[None, :, None, :]], m)
    return np.einsum("...sj,...s->...j", minors, eps * a) / sq[..., None]


def hodge_star(a, k, g, ginv=None, det=None, validate=True):
    """Hodge dual of a canonical k-form in the metric g.

    (*a)_{j1..j_{7-k}} = (1/k!) a^{i1..ik} eps_{i1..ik j1..j_{7-k}} sqrt(det g).

    ``ginv``/``det`` may be supplied to skip recomputation in hot loops;
    ``validate=False`` skips the positivity check when the caller already
    holds a validated metric.
    """
    a = np.asarray(a, dtype=float)
    g = np.asarray(g, dtype=float)
    if validate:
        _cholesky_or_raise(g)
    if det is None:
        det = np.linalg.det(g)
    sq = np.sqrt(det)
    if k == 7:
        return a / sq[..., None]
    if k >= 4:
        return _star_high_rank(a, k, g, sq)
    if ginv is None:
        ginv = np.linalg.inv(g)
    raised = raise_all_indices(to_dense(a, k), k, ginv)
    up = from_dense(raised, k)
    src, sgn = _star_tables(k)
    return up[..., src] * sgn * sq[..., None]


_SYM_IDX = [(i, j) for i in range(DIM) for j in range(i, DIM)]


def _pack_sym(m):
    return np.stack([m[..., i, j] for i, j in _SYM_IDX], axis=-1)


def _unpack_sym(coords):
    m = np.zeros(coords.shape[:-1] + (DIM, DIM))
    for col, (i, j) in enumerate(_SYM_IDX):
        m[..., i, j] = coords[..., col]
        if i != j:
            m[..., j, i] = coords[..., col]
    return m


@lru_cache(maxsize=None)
def _psi_newton_matrix():
    """Inverse Jacobian of g -> metric(*_g psi0) - g at the flat point.

    The plain fixed-point map has eigenvalue +2 on the 27-dimensional
    traceless block (and -1/3 on the trace), so Picard iteration diverges;
    Newton steps with this frozen Jacobian converge linearly at a rate set by
    the distance from the model structure.
    """
    psi0 = standard_psi()
    eye = np.eye(DIM)

    def fixed_point_map(m):
        g = eye + m
        return induced_metric(hodge_star(psi0, 4, g)).metric - eye

    eps = 1e-6
    jac = np.zeros((len(_SYM_IDX), len(_SYM_IDX)))
    for col, (i, j) in enumerate(_SYM_IDX):
        basis = np.zeros((DIM, DIM))
        basis[i, j] = 1.0
        basis[j, i] = 1.0
        jac[:, col] = _pack_sym((fixed_point_map(eps * basis) - fixed_point_map(-eps * basis)) / (2 * eps))
    return np.linalg.inv(jac - np.eye(len(_SYM_IDX)))


def metric_from_psi(psi, seed=None, tol=1e-12, max_iter=60):
    """Recover (InducedMetric, phi) from a positive 4-form field.

    Solves the pointwise fixed point g = metric(*_g psi) by chord Newton with
    the flat-point Jacobian; ``seed`` (e.g. the previous step's metric) sets
    the starting guess.  Valid in a neighbourhood of the model structure.
    """
    psi = np.asarray(psi, dtype=float)
    lead = psi.shape[:-1]
    g = np.broadcast_to(np.eye(DIM), lead + (DIM, DIM)).copy() if seed is None else np.asarray(seed, dtype=float).copy()
    newton = _psi_newton_matrix()
    last = np.inf
    for _ in range(max_iter):
        phi = hodge_star(psi, 4, g)
        ind = induced_metric(phi)
        residual = ind.metric - g
        scale = max(1.0, float(np.max(np.abs(g))))
        size = float(np.max(np.abs(residual))) / scale
        if size <= tol:
            return ind, phi
        if size > 4.0 * last:
            break
        last = min(last, size)
        g = g - _unpack_sym(np.einsum("rc,...c->...r", newton, _pack_sym(residual)))
    raise NonConvergenceError("metric recovery from the 4-form did not settle")


def pullback_form(a, k, mat):
    """Pull a k-form back along the linear map with matrix ``mat``.

    (A*a)_{i1..ik} = A^{p1}_{i1} ... A^{pk}_{ik} a_{p1..pk}.
    """
    dense = to_dense(a, k)
    mat = np.asarray(mat, dtype=float)
    for i in range(k):
        dense = np.moveaxis(dense, -k + i, -1)
        dense = np.einsum("pa,...p->...a", mat, dense)
        dense = np.moveaxis(dense, -1, -k + i)
    return from_dense(dense, k)
