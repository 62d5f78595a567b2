"""Time integration of flows of G2 structures and their singularity monitors.

The primary field is the 3-form (Laplacian flow, generic driver) or the
4-form (modified co-flow).  Each accepted step rebuilds the geometric caches;
the blow-up quantity

    Lambda = sup_M (|Rm|^2 + |T|^4 + |grad T|^2)^(1/2)

controls the explicit RK4 step size and the rejection logic, and the doubling
quantity Q = (mu + |Rm|^2 + |T|^4 + |grad T|^2)(|grad Rm|^2 + |grad^2 T|^2)
is sampled along the run.  Trajectories carry everything the entropy and
collapse post-processing needs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, NamedTuple, Optional

import numpy as np

from .algebra import (
    from_dense,
    hodge_star,
    induced_metric,
    metric_from_psi,
    tensor_norm_sq,
    to_dense,
)
from .errors import (
    AsymmetricHError,
    DegenerateFormError,
    InsufficientDynamicRangeError,
    MetricNotPositiveError,
    NonConvergenceError,
    StepFailureError,
)
from .manifold import (
    Grid,
    covariant_derivative,
    exterior_derivative,
    hodge_laplacian,
    levi_civita,
    torsion_from_phi,
)

FLOW_KINDS = ("laplacian_flow", "modified_coflow", "generic")

#: absolute floor for the Lambda-jump rejection test, so torsion-free data
#: (Lambda at rounding level) never trips the factor-4 rule on noise
LAMBDA_REJECT_FLOOR = 1e-6


@dataclass
class FlowSpec:
    """Which flow to run and the constants entering its equations.

    kind               one of FLOW_KINDS
    A                  the modified co-flow constant
    coefficient_bound  the a-priori coefficient bound used for step control
    mu_q               offset in the doubling quantity Q (default bound^2)
    cfl                explicit-step safety factor in (0, 1]
    h_fn, x_fn         evaluators (grid, geometry) -> field for the generic
                       driver's symmetric part and vector part
    """

    kind: str
    A: float = 0.0
    coefficient_bound: float = 1.0
    mu_q: Optional[float] = None
    cfl: float = 0.5
    h_fn: Optional[Callable] = None
    x_fn: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in FLOW_KINDS:
            raise ValueError(f"unknown flow kind {self.kind!r}")
        if not np.isfinite(self.A):
            raise ValueError("A must be finite")
        if not (self.coefficient_bound > 0):
            raise ValueError("coefficient_bound must be positive")
        if not (0 < self.cfl <= 1):
            raise ValueError("cfl must lie in (0, 1]")
        if self.kind == "generic" and self.h_fn is None:
            raise ValueError("generic flow needs an h evaluator")
        if self.kind == "modified_coflow" and self.A == 0.0:
            warnings.warn(
                "A = 0 degenerates to the plain Laplacian co-flow, which is "
                "not parabolic; expect step rejections on rough data",
                stacklevel=2,
            )

    @property
    def mu_q_value(self):
        return self.coefficient_bound**2 if self.mu_q is None else self.mu_q


class Geometry:
    """Derived geometric data of one primary form field, built lazily.

    For a 3-form primary the metric comes from the induced bilinear form; for
    a 4-form primary it is recovered by the fixed-point iteration
    g_{n+1} = metric(*_{g_n} psi), seeded with the previous step's metric.
    """

    def __init__(self, grid, phi=None, psi=None, metric_seed=None):
        if (phi is None) == (psi is None):
            raise ValueError("provide exactly one of phi or psi")
        self.grid = grid
        self._phi = phi
        self._psi = psi
        self._seed = metric_seed

    @cached_property
    def _metric_data(self):
        if self._phi is not None:
            return induced_metric(self._phi), self._phi
        induced, phi = metric_from_psi(self._psi, seed=self._seed)
        return induced, phi

    @property
    def induced(self):
        return self._metric_data[0]

    @property
    def metric(self):
        return self.induced.metric

    @cached_property
    def ginv(self):
        return np.linalg.inv(self.metric)

    @cached_property
    def det_g(self):
        return np.asarray(self.induced.volume) ** 2

    @property
    def sqrt_detg(self):
        return self.induced.volume

    @cached_property
    def phi(self):
        if self._phi is not None:
            return self._phi
        return self._metric_data[1]

    @cached_property
    def psi(self):
        if self._psi is not None:
            return self._psi
        return hodge_star(self.phi, 3, self.metric)

    @property
    def primary(self):
        return self._phi if self._phi is not None else self._psi

    @property
    def primary_rank(self):
        return 3 if self._phi is not None else 4

    @cached_property
    def curvature(self):
        return levi_civita(self.grid, self.metric)

    @cached_property
    def torsion(self):
        return torsion_from_phi(self.grid, self.phi, induced=self.induced, psi=self.psi)

    @cached_property
    def trace_torsion(self):
        return np.einsum("...ij,...ij->...", self.ginv, self.torsion)

    @cached_property
    def grad_torsion(self):
        return covariant_derivative(self.grid, self.torsion, 2, self.curvature.christoffel)

    @cached_property
    def grad_riemann(self):
        return covariant_derivative(self.grid, self.curvature.riemann, 4, self.curvature.christoffel)

    @cached_property
    def grad2_torsion(self):
        return covariant_derivative(self.grid, self.grad_torsion, 3, self.curvature.christoffel)

    @cached_property
    def lambda_field(self):
        """Pointwise (|Rm|^2 + |T|^4 + |grad T|^2)^(1/2)."""
        rm2 = tensor_norm_sq(self.curvature.riemann, 4, self.ginv)
        t2 = tensor_norm_sq(self.torsion, 2, self.ginv)
        gt2 = tensor_norm_sq(self.grad_torsion, 3, self.ginv)
        return np.sqrt(rm2 + t2**2 + gt2)

    @cached_property
    def lambda_sup(self):
        return float(np.max(self.lambda_field))

    def shi_q_sup(self, mu_q):
        """sup of (mu + |Rm|^2 + |T|^4 + |grad T|^2)(|grad Rm|^2 + |grad^2 T|^2)."""
        grm2 = tensor_norm_sq(self.grad_riemann, 5, self.ginv)
        g2t2 = tensor_norm_sq(self.grad2_torsion, 4, self.ginv)
        return float(np.max((mu_q + self.lambda_field**2) * (grm2 + g2t2)))

    def sup_tensor(self, tensor, rank):
        return float(np.sqrt(np.max(tensor_norm_sq(tensor, rank, self.ginv))))

    @cached_property
    def d_primary_residual(self):
        k = self.primary_rank
        d = exterior_derivative(self.grid, self.primary, k)
        return self.sup_tensor(to_dense(d, k + 1), k + 1)


def laplacian_flow_rhs(grid, geom):
    """d(d* phi) + d*(d phi) with the metric induced by phi.

    This is the (positive, dd* + d*d) Hodge Laplacian; the library's
    ``hodge_laplacian`` carries the opposite, function-level analyst sign, and
    the metric-velocity identity fixes this orientation of the flow.
    """
    return -hodge_laplacian(
        grid, geom.phi, 3, geom.metric, ginv=geom.ginv, det=geom.det_g, validate=False
    )


def modified_coflow_rhs(grid, geom, a_const):
    """dd* psi + d*d psi + 2 d((A - Tr T) phi), phi recovered as *psi."""
    lap = -hodge_laplacian(
        grid, geom.psi, 4, geom.metric, ginv=geom.ginv, det=geom.det_g, validate=False
    )
    coeff = a_const - geom.trace_torsion
    return lap + 2.0 * exterior_derivative(grid, coeff[..., None] * geom.phi, 3)


def generic_rhs(grid, geom, h, x=None):
    """Velocity of the 3-form under the general (h, X) driver.

    (d phi/dt)_ijk = h^l_i phi_ljk + h^l_j phi_ilk + h^l_k phi_ijl
                     + X^l psi_lijk,
    normalized so the induced metric velocity is exactly 2 h.
    """
    h = np.asarray(h, dtype=float)
    scale = max(1.0, float(np.max(np.abs(h))))
    if float(np.max(np.abs(h - np.einsum("...ij->...ji", h)))) > 1e-12 * scale:
        raise AsymmetricHError("h must be symmetric")
    phid = to_dense(geom.phi, 3)
    mixed = np.einsum("...lp,...pi->...li", geom.ginv, h)
    out = np.einsum("...li,...ljk->...ijk", mixed, phid)
    out = out + np.einsum("...lj,...ilk->...ijk", mixed, phid)
    out = out + np.einsum("...lk,...ijl->...ijk", mixed, phid)
    if x is not None:
        psid = to_dense(geom.psi, 4)
        out = out + np.einsum("...l,...lijk->...ijk", np.asarray(x, dtype=float), psid)
    return from_dense(out, 3)


def flow_rhs(grid, geom, spec):
    if spec.kind == "laplacian_flow":
        return laplacian_flow_rhs(grid, geom)
    if spec.kind == "modified_coflow":
        return modified_coflow_rhs(grid, geom, spec.A)
    h = spec.h_fn(grid, geom)
    x = spec.x_fn(grid, geom) if spec.x_fn is not None else None
    return generic_rhs(grid, geom, h, x)


def _sym(t):
    return 0.5 * (t + np.einsum("...ij->...ji", t))


def e_tensor(grid, geom, spec):
    """Non-Ricci part E of the metric velocity dg/dt = -2 Ric + E.

    Laplacian flow:     E = -(2/3)|T|^2 g - 4 T_i^k T_kj
    modified co-flow:   E = T^{km} T^{ln} phi_ikl phi_jmn + (4A - 2 Tr T) T_ij
    generic driver:     E = 2 h + 2 Ric
    Outputs are symmetrized; the discrete torsion misses its continuum
    symmetry class only at truncation level.
    """
    torsion = geom.torsion
    ginv = geom.ginv
    if spec.kind == "laplacian_flow":
        t2 = tensor_norm_sq(torsion, 2, ginv)
        mixed = np.einsum("...ia,...ak->...ik", torsion, ginv)
        tt = np.einsum("...ik,...kj->...ij", mixed, torsion)
        return _sym(-(2.0 / 3.0) * t2[..., None, None] * geom.metric - 4.0 * tt)
    if spec.kind == "modified_coflow":
        phid = to_dense(geom.phi, 3)
        t_up = np.einsum("...ka,...ab,...bm->...km", ginv, torsion, ginv)
        s1 = np.einsum("...km,...ikl->...mil", t_up, phid)
        s2 = np.einsum("...ln,...mil->...imn", t_up, s1)
        term = np.einsum("...imn,...jmn->...ij", s2, phid)
        lin = (4.0 * spec.A - 2.0 * geom.trace_torsion)[..., None, None] * torsion
        return _sym(term + lin)
    h = spec.h_fn(grid, geom)
    return _sym(2.0 * np.asarray(h, dtype=float) + 2.0 * geom.curvature.ricci)


@dataclass
class FlowState:
    """One point on a flow timeline: the primary field plus its caches."""

    t: float
    geom: Geometry
    dt_last: float = 0.0

    @property
    def primary(self):
        return self.geom.primary


def make_state(grid, spec, primary, t=0.0, metric_seed=None):
    if spec.kind == "modified_coflow":
        geom = Geometry(grid, psi=primary, metric_seed=metric_seed)
    else:
        geom = Geometry(grid, phi=primary)
    return FlowState(t=t, geom=geom)


class DiagnosticsRow(NamedTuple):
    t: float
    dt: float
    sup_rm: float
    sup_t2: float
    sup_gradt: float
    lam: float
    q: float
    sup_ric: float
    sup_r: float
    d_residual: float


DIAGNOSTICS_HEADER = "t,dt,sup_Rm,sup_T2,sup_gradT,Lambda,Q,sup_Ric,sup_R,d_phi_residual"


def diagnostics_row(state, spec):
    geom = state.geom
    sup_rm = geom.sup_tensor(geom.curvature.riemann, 4)
    sup_t2 = float(np.max(tensor_norm_sq(geom.torsion, 2, geom.ginv)))
    sup_gradt = geom.sup_tensor(geom.grad_torsion, 3)
    sup_ric = geom.sup_tensor(geom.curvature.ricci, 2)
    sup_r = float(np.max(np.abs(geom.curvature.scalar)))
    return DiagnosticsRow(
        t=state.t,
        dt=state.dt_last,
        sup_rm=sup_rm,
        sup_t2=sup_t2,
        sup_gradt=sup_gradt,
        lam=geom.lambda_sup,
        q=geom.shi_q_sup(spec.mu_q_value),
        sup_ric=sup_ric,
        sup_r=sup_r,
        d_residual=geom.d_primary_residual,
    )


def format_diagnostics_csv(rows):
    lines = [DIAGNOSTICS_HEADER]
    for row in rows:
        lines.append(",".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"


@dataclass
class TrajectorySample:
    """Everything the entropy and collapse layers need at one time."""

    t: float
    primary: np.ndarray
    phi: np.ndarray
    metric: np.ndarray
    ginv: np.ndarray
    sqrt_detg: np.ndarray
    ricci: np.ndarray
    scalar: np.ndarray
    torsion: np.ndarray
    e_field: np.ndarray
    sup_e: float
    row: DiagnosticsRow


@dataclass
class RescaledSnapshot:
    """Dyadic-threshold snapshot, rescaled as (Q^{3/2} phi, Q g)."""

    t: float
    q_scale: float
    primary_rank: int
    primary: np.ndarray
    metric: np.ndarray


@dataclass
class BlowupMonitor:
    mu_q: float
    t: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    q: list = field(default_factory=list)

    def append(self, t, lam, q):
        if self.t and t <= self.t[-1]:
            raise ValueError("monitor times must increase strictly")
        self.t.append(float(t))
        self.lam.append(float(lam))
        self.q.append(float(q))


@dataclass
class Trajectory:
    grid: Grid
    spec: FlowSpec
    samples: list = field(default_factory=list)
    monitor: BlowupMonitor = None
    snapshots: list = field(default_factory=list)
    steps_taken: int = 0
    singular: bool = False
    singular_time: Optional[float] = None

    @property
    def rows(self):
        return [s.row for s in self.samples]

    @property
    def times(self):
        return np.array([s.t for s in self.samples])

    def sample_at(self, t):
        """Linear interpolation of (g, ginv, sqrt_detg, R, E) at time t."""
        times = self.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
            from .errors import TrajectoryGapError

            raise TrajectoryGapError(f"t = {t} outside stored range [{times[0]}, {times[-1]}]")
        t = min(max(t, times[0]), times[-1])
        j = int(np.searchsorted(times, t))
        if j == 0:
            lo, hi, w = 0, 0, 0.0
        else:
            lo, hi = j - 1, min(j, len(self.samples) - 1)
            span = times[hi] - times[lo]
            w = 0.0 if span == 0 else (t - times[lo]) / span
        a, b = self.samples[lo], self.samples[hi]
        blend = lambda x, y: (1.0 - w) * x + w * y
        g = blend(a.metric, b.metric)
        return {
            "metric": g,
            "ginv": np.linalg.inv(g),
            "sqrt_detg": np.sqrt(np.linalg.det(g)),
            "scalar": blend(a.scalar, b.scalar),
            "e_field": blend(a.e_field, b.e_field),
        }


def _sample(state, spec):
    geom = state.geom
    e_field = e_tensor(geom.grid, geom, spec)
    return TrajectorySample(
        t=state.t,
        primary=state.primary.copy(),
        phi=geom.phi.copy(),
        metric=geom.metric.copy(),
        ginv=geom.ginv.copy(),
        sqrt_detg=np.asarray(geom.sqrt_detg).copy(),
        ricci=geom.curvature.ricci.copy(),
        scalar=np.asarray(geom.curvature.scalar).copy(),
        torsion=geom.torsion.copy(),
        e_field=e_field,
        sup_e=geom.sup_tensor(e_field, 2),
        row=diagnostics_row(state, spec),
    )


def _rk4(state, spec, dt):
    grid = state.geom.grid

    def geom_of(primary):
        if spec.kind == "modified_coflow":
            return Geometry(grid, psi=primary, metric_seed=state.geom.metric)
        return Geometry(grid, phi=primary)

    y = state.primary
    k1 = flow_rhs(grid, state.geom, spec)
    k2 = flow_rhs(grid, geom_of(y + 0.5 * dt * k1), spec)
    k3 = flow_rhs(grid, geom_of(y + 0.5 * dt * k2), spec)
    k4 = flow_rhs(grid, geom_of(y + dt * k3), spec)
    y1 = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    geom1 = geom_of(y1)
    geom1.metric  # force validation of positivity before acceptance
    return FlowState(t=state.t + dt, geom=geom1, dt_last=dt)


_REJECTABLE = (DegenerateFormError, MetricNotPositiveError, NonConvergenceError, np.linalg.LinAlgError)


def propose_dt(state, spec):
    grid = state.geom.grid
    hmin = min(grid.spacings)
    return spec.cfl * hmin * hmin / max(1.0, state.geom.lambda_sup)


def step(state, spec, dt_cap=None, max_rejections=20):
    """One accepted RK4 step; halves dt on positivity loss or Lambda jumps.

    After ``max_rejections`` halvings the step fails and the time is reported
    as a singularity candidate.
    """
    dt = propose_dt(state, spec)
    if dt_cap is not None:
        dt = min(dt, dt_cap)
    lam_old = state.geom.lambda_sup
    limit = max(4.0 * lam_old, LAMBDA_REJECT_FLOOR * max(1.0, spec.coefficient_bound))
    for _ in range(max_rejections + 1):
        try:
            new = _rk4(state, spec, dt)
        except _REJECTABLE:
            dt *= 0.5
            continue
        if new.geom.lambda_sup > limit:
            dt *= 0.5
            continue
        return new
    raise StepFailureError("step rejected 20 times; singularity candidate", t=state.t)


@dataclass
class StopRule:
    """Stop when any set bound is reached."""

    t_max: Optional[float] = None
    lambda_max: Optional[float] = None
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.t_max is None and self.lambda_max is None and self.max_steps is None:
            raise ValueError("set at least one stopping bound")

    def done(self, t, lam, steps):
        if self.t_max is not None and t >= self.t_max - 1e-15:
            return True
        if self.lambda_max is not None and lam >= self.lambda_max:
            return True
        if self.max_steps is not None and steps >= self.max_steps:
            return True
        return False


def run(initial, spec, stop, cadence=1):
    """Advance a flow, recording diagnostics and dyadic-Lambda snapshots.

    Snapshots fire the first time Lambda crosses 2^m Lambda_0 and store the
    rescaled pair (Q^{3/2} primary, Q g) -- for a 4-form primary the field
    scales as Q^2.  A step failure marks the trajectory as a singularity
    candidate instead of raising.
    """
    grid = initial.geom.grid
    traj = Trajectory(grid=grid, spec=spec, monitor=BlowupMonitor(mu_q=spec.mu_q_value))
    state = initial
    traj.samples.append(_sample(state, spec))
    traj.monitor.append(state.t, state.geom.lambda_sup, traj.samples[0].row.q)
    lam0 = max(state.geom.lambda_sup, 1e-8)
    threshold = 2.0 * lam0

    steps = 0
    while not stop.done(state.t, state.geom.lambda_sup, steps):
        dt_cap = None if stop.t_max is None else stop.t_max - state.t
        try:
            state = step(state, spec, dt_cap=dt_cap)
        except StepFailureError:
            traj.singular = True
            traj.singular_time = state.t
            break
        steps += 1
        traj.steps_taken = steps
        lam = state.geom.lambda_sup
        sampled = False
        if steps % cadence == 0 or stop.done(state.t, lam, steps):
            traj.samples.append(_sample(state, spec))
            traj.monitor.append(state.t, lam, traj.samples[-1].row.q)
            sampled = True
        while lam >= threshold:
            scale = lam
            power = 1.5 if state.geom.primary_rank == 3 else 2.0
            traj.snapshots.append(
                RescaledSnapshot(
                    t=state.t,
                    q_scale=scale,
                    primary_rank=state.geom.primary_rank,
                    primary=scale**power * state.primary,
                    metric=scale * state.geom.metric,
                )
            )
            threshold *= 2.0
        if traj.singular:
            break
    if traj.singular and (not traj.samples or traj.samples[-1].t < state.t):
        traj.samples.append(_sample(state, spec))
    return traj


@dataclass
class BlowupFit:
    c_hat: float        # amplitude of the fitted power law C / (T - t)^p
    exponent: float     # the fitted slope, -p
    t_hat: float        # fitted singular time
    c_lower: float      # inf over the window of Lambda (T_hat - t)
    rss: float
    n_samples: int


def fit_blowup(t, lam):
    """Fit Lambda(t) = C / (T - t)^p by regressing log Lambda on log(T - t).

    T is chosen by coarse scan plus golden-section refinement of the residual
    sum of squares.  Requires at least 10 samples and a 10x overall rise.
    """
    t = np.asarray(t, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if t.ndim != 1 or t.shape != lam.shape:
        raise ValueError("t and Lambda series must be 1-d and aligned")
    if len(t) < 10:
        raise InsufficientDynamicRangeError("need at least 10 samples")
    if np.any(lam <= 0):
        raise InsufficientDynamicRangeError("Lambda series must be positive")
    if float(np.max(lam)) < 10.0 * float(lam[0]):
        raise InsufficientDynamicRangeError("Lambda never grew by 10x")

    y = np.log(lam)
    span = t[-1] - t[0]

    def sse(T):
        x = np.log(T - t)
        xm, ym = x.mean(), y.mean()
        vx = np.sum((x - xm) ** 2)
        slope = np.sum((x - xm) * (y - ym)) / vx
        res = y - ym - slope * (x - xm)
        return float(np.sum(res**2))

    lo = t[-1] + 1e-9 * span
    hi = t[-1] + 10.0 * span
    cand = np.geomspace(lo - t[-1], hi - t[-1], 128) + t[-1]
    best = int(np.argmin([sse(T) for T in cand]))
    a = cand[max(best - 1, 0)]
    b = cand[min(best + 1, len(cand) - 1)]
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    for _ in range(200):
        if sse(c) < sse(d):
            b, d = d, c
            c = b - invphi * (b - a)
        else:
            a, c = c, d
            d = a + invphi * (b - a)
        if b - a < 1e-14 * max(1.0, abs(b)):
            break
    t_hat = 0.5 * (a + b)
    x = np.log(t_hat - t)
    xm, ym = x.mean(), y.mean()
    slope = float(np.sum((x - xm) * (y - ym)) / np.sum((x - xm) ** 2))
    icept = ym - slope * xm
    res = y - icept - slope * x
    return BlowupFit(
        c_hat=float(np.exp(icept)),
        exponent=slope,
        t_hat=float(t_hat),
        c_lower=float(np.min(lam * (t_hat - t))),
        rss=float(np.sum(res**2)),
        n_samples=len(t),
    )
