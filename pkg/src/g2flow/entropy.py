"""The W entropy functional, its minimizer mu, and its evolution checks.

    W(g, f, tau) = int [tau (R + |grad f|^2) + f - n] (4 pi tau)^{-n/2} e^{-f} dV

with n = 7 and the probe constraint int (4 pi tau)^{-n/2} e^{-f} dV = 1.
mu(g, tau) is the constrained infimum; it is computed through the
substitution u^2 = (4 pi tau)^{-n/2} e^{-f}, which turns the problem into

    minimize  F(u) = int [4 tau |grad u|^2 + tau R u^2 - u^2 ln u^2] dV
                     - (n/2) ln(4 pi tau) - n      over  int u^2 dV = 1,

solved by projected gradient descent with backtracking line search.  Along a
geometric flow dg/dt = -2 Ric + E with f solving the conjugate backwards heat
equation, dW/dt equals

    int { 2 tau |Ric + Hess f - g/(2 tau) - E/4|^2 - (tau/8)|E|^2 } dm,

which is bounded below by -(tau/8) (sup |E|)^2; the quasi-monotonicity of mu
follows by integrating in tau.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .algebra import tensor_norm_sq
from .errors import NonConvergenceError, NotNormalizedError, TrajectoryGapError
from .manifold import (
    covariant_hessian,
    christoffel_symbols,
    integral,
    laplace_beltrami,
    levi_civita,
    scalar_gradient_norm_sq,
)

N_DIM = 7

#: probes must satisfy the unit-mass constraint to this absolute residual
NORMALIZATION_TOL = 1e-8


def probe_weight(f, tau):
    """(4 pi tau)^{-n/2} e^{-f}, the density the constraint normalizes."""
    return (4.0 * np.pi * tau) ** (-N_DIM / 2.0) * np.exp(-f)


def normalization_residual(grid, f, tau, sqrt_detg):
    return abs(integral(grid, probe_weight(f, tau), sqrt_detg=sqrt_detg) - 1.0)


@dataclass
class EntropyProbe:
    """A normalized probe function for the W functional."""

    tau: float
    f: np.ndarray
    normalization_residual: float


def normalize_probe(grid, f, tau, sqrt_detg):
    """Shift f by a constant so the unit-mass constraint holds."""
    mass = integral(grid, probe_weight(f, tau), sqrt_detg=sqrt_detg)
    if mass <= 0 or not np.isfinite(mass):
        raise NotNormalizedError("probe has non-finite or non-positive mass")
    f = f + np.log(mass)
    return EntropyProbe(tau=tau, f=f, normalization_residual=normalization_residual(grid, f, tau, sqrt_detg))


def w_functional(grid, g, f, tau, scalar=None, ginv=None, sqrt_detg=None):
    """Evaluate W; the probe must already satisfy the constraint.

    ``scalar``/``ginv``/``sqrt_detg`` may be passed when precomputed (for
    trajectory samples); otherwise they are derived from g.
    """
    g = np.asarray(g, dtype=float)
    if ginv is None:
        ginv = np.linalg.inv(g)
    if sqrt_detg is None:
        sqrt_detg = np.sqrt(np.linalg.det(g))
    if scalar is None:
        scalar = levi_civita(grid, g).scalar
    if normalization_residual(grid, f, tau, sqrt_detg) > NORMALIZATION_TOL:
        raise NotNormalizedError("probe violates the unit-mass constraint")
    grad2 = scalar_gradient_norm_sq(grid, f, ginv)
    integrand = (tau * (scalar + grad2) + f - N_DIM) * probe_weight(f, tau)
    return integral(grid, integrand, sqrt_detg=sqrt_detg)


@dataclass
class MuResult:
    mu: float
    f_star: np.ndarray
    iterations: int
    gradient_residual: float
    converged: bool
    u_star: np.ndarray = None


def _xlogx2(u):
    w = u * u
    return np.where(w > 1e-300, w * np.log(np.maximum(w, 1e-300)), 0.0)


def minimize_mu(grid, g, tau, tol=1e-8, max_iter=100_000, u0=None, scalar=None):
    """Constrained infimum of W over normalized probes, by projected descent.

    Returns the best point found with ``converged=False`` instead of raising
    when the iteration budget runs out.
    """
    g = np.asarray(g, dtype=float)
    ginv = np.linalg.inv(g)
    sqrt_detg = np.sqrt(np.linalg.det(g))
    if scalar is None:
        scalar = levi_civita(grid, g).scalar
    offset = -(N_DIM / 2.0) * np.log(4.0 * np.pi * tau) - N_DIM

    def sphere_normalize(u):
        return u / np.sqrt(integral(grid, u * u, sqrt_detg=sqrt_detg))

    def functional(u):
        grad2 = scalar_gradient_norm_sq(grid, u, ginv)
        return integral(grid, 4.0 * tau * grad2 + tau * scalar * u * u - _xlogx2(u), sqrt_detg=sqrt_detg) + offset

    def gradient(u):
        lap = laplace_beltrami(grid, u, ginv, sqrt_detg)
        w = np.maximum(u * u, 1e-300)
        return -8.0 * tau * lap + 2.0 * tau * scalar * u - 2.0 * u * np.log(w) - 2.0 * u

    if u0 is None:
        volume = integral(grid, np.ones(grid.shape), sqrt_detg=sqrt_detg)
        u = np.full(grid.shape, 1.0 / np.sqrt(volume))
    else:
        u = sphere_normalize(np.asarray(u0, dtype=float))

    value = functional(u)
    step = 1e-2
    iterations = 0
    residual = np.inf
    prev_u = None
    prev_proj = None
    for iterations in range(1, max_iter + 1):
        grad = gradient(u)
        proj = grad - integral(grid, grad * u, sqrt_detg=sqrt_detg) * u
        residual = float(np.max(np.abs(proj)))
        if residual <= tol:
            break
        # Barzilai-Borwein seed for the backtracking search
        if prev_u is not None:
            du = u - prev_u
            dp = proj - prev_proj
            denom = integral(grid, dp * dp, sqrt_detg=sqrt_detg)
            if denom > 0:
                bb = abs(integral(grid, du * dp, sqrt_detg=sqrt_detg)) / denom
                if np.isfinite(bb) and bb > 0:
                    step = bb
        prev_u, prev_proj = u, proj
        norm2 = integral(grid, proj * proj, sqrt_detg=sqrt_detg)
        accepted = False
        for _ in range(60):
            cand = sphere_normalize(u - step * proj)
            if np.min(cand) <= 0.0:
                step *= 0.5
                continue
            cand_value = functional(cand)
            if cand_value <= value - 1e-4 * step * norm2:
                u, value = cand, cand_value
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break  # line search stalled at rounding level
    f_star = -2.0 * np.log(np.maximum(u, 1e-300)) - (N_DIM / 2.0) * np.log(4.0 * np.pi * tau)
    return MuResult(
        mu=value,
        f_star=f_star,
        iterations=iterations,
        gradient_residual=residual,
        converged=bool(residual <= tol),
        u_star=u,
    )


def _interp_state(traj, t):
    return traj.sample_at(t)


def backwards_heat_rhs(grid, f, tau, state):
    """df/dt = -Lap f - R + (1/2) tr_g E + n/(2 tau) + |grad f|^2."""
    ginv = state["ginv"]
    lap = laplace_beltrami(grid, f, ginv, state["sqrt_detg"])
    tr_e = np.einsum("...ij,...ij->...", ginv, state["e_field"])
    grad2 = scalar_gradient_norm_sq(grid, f, ginv)
    return -lap - state["scalar"] + 0.5 * tr_e + N_DIM / (2.0 * tau) + grad2


def backwards_heat_step(grid, traj, f, t, dt, t_ref):
    """One RK2 step of f backwards in time (t decreases, tau = T - t grows).

    The conjugate equation preserves the unit-mass constraint exactly; the
    O(dt^2) discrete drift is removed by an additive renormalization whose
    size is returned alongside the new f.
    """
    if dt <= 0:
        return f, t, 0.0
    s0 = _interp_state(traj, t)
    k1 = backwards_heat_rhs(grid, f, t_ref - t, s0)
    tm = t - 0.5 * dt
    sm = _interp_state(traj, tm)
    k2 = backwards_heat_rhs(grid, f - 0.5 * dt * k1, t_ref - tm, sm)
    f_new = f - dt * k2
    t_new = t - dt
    s1 = _interp_state(traj, t_new)
    mass = integral(grid, probe_weight(f_new, t_ref - t_new), sqrt_detg=s1["sqrt_detg"])
    correction = float(np.log(mass))
    return f_new + correction, t_new, abs(correction)


def solve_backwards_heat(traj, t_ref, f_end=None, substeps=8):
    """Solve the conjugate equation from the last sample back to the first.

    Returns (f at each sample, total renormalization applied).  ``f_end``
    defaults to the constant normalized probe at the final time; tau = t_ref
    - t must stay positive over the whole trajectory.
    """
    grid = traj.grid
    times = traj.times
    if t_ref <= times[-1]:
        raise TrajectoryGapError("t_ref must exceed the final sample time")
    last = traj.samples[-1]
    if f_end is None:
        f_end = normalize_probe(
            grid, np.zeros(grid.shape), t_ref - last.t, last.sqrt_detg
        ).f
    fs = [None] * len(times)
    fs[-1] = np.asarray(f_end, dtype=float)
    total_correction = 0.0
    t = float(times[-1])
    f = fs[-1]
    for idx in range(len(times) - 2, -1, -1):
        span = t - float(times[idx])
        dt = span / substeps
        for _ in range(substeps):
            f, t, corr = backwards_heat_step(grid, traj, f, t, dt, t_ref)
            total_correction += corr
        t = float(times[idx])
        fs[idx] = f
    return fs, total_correction


@dataclass
class DwdtRow:
    t: float
    dw_dt_fd: float
    dw_dt_formula: float
    lower_bound: float
    residual: float


@dataclass
class DwdtReport:
    rows: list
    max_residual: float
    bound_satisfied: bool


def dwdt_identity_check(traj, fs, t_ref, slack=1e-6):
    """Compare the finite-difference dW/dt against the closed-form integrand.

    Also verifies dW/dt >= -(tau/8)(sup|E|)^2 at every interior sample, with
    slack scaled by the bound.
    """
    grid = traj.grid
    times = traj.times
    ws = []
    for sample, f in zip(traj.samples, fs):
        ws.append(
            w_functional(
                grid,
                sample.metric,
                f,
                t_ref - sample.t,
                scalar=sample.scalar,
                ginv=sample.ginv,
                sqrt_detg=sample.sqrt_detg,
            )
        )
    rows = []
    bound_ok = True
    for i in range(1, len(times) - 1):
        sample = traj.samples[i]
        tau = t_ref - sample.t
        # second-order three-point derivative on the (possibly nonuniform) grid
        hm = times[i] - times[i - 1]
        hp = times[i + 1] - times[i]
        fd = (
            hm * hm * ws[i + 1] + (hp * hp - hm * hm) * ws[i] - hp * hp * ws[i - 1]
        ) / (hm * hp * (hm + hp))
        gamma = christoffel_symbols(grid, sample.metric, ginv=sample.ginv)
        hess = covariant_hessian(grid, fs[i], gamma)
        tensor = sample.ricci + hess - sample.metric / (2.0 * tau) - sample.e_field / 4.0
        t_sq = tensor_norm_sq(tensor, 2, sample.ginv)
        e_sq = tensor_norm_sq(sample.e_field, 2, sample.ginv)
        integrand = (2.0 * tau * t_sq - (tau / 8.0) * e_sq) * probe_weight(fs[i], tau)
        formula = integral(grid, integrand, sqrt_detg=sample.sqrt_detg)
        bound = -(tau / 8.0) * sample.sup_e**2
        ok = fd >= bound - slack * (1.0 + abs(bound))
        bound_ok = bound_ok and ok
        rows.append(
            DwdtRow(
                t=float(sample.t),
                dw_dt_fd=float(fd),
                dw_dt_formula=float(formula),
                lower_bound=float(bound),
                residual=float(abs(fd - formula) / (1.0 + abs(fd))),
            )
        )
    max_residual = max((r.residual for r in rows), default=0.0)
    return DwdtReport(rows=rows, max_residual=max_residual, bound_satisfied=bound_ok)


@dataclass
class QuasiMonotonicityResult:
    tau1: float
    tau2: float
    mu1: float
    mu2: float
    integral_term: float
    satisfied: bool
    slack: float
    inconclusive: bool
    mu1_result: Optional[MuResult] = None
    mu2_result: Optional[MuResult] = None


def quasi_monotonicity_check(traj, tau1, tau2, t_ref, tol=1e-8, max_iter=100_000):
    """Check mu(g(T-tau2), tau2) <= mu(g(T-tau1), tau1) + (1/8) int tau sup|E|^2 dtau.

    The tau integral is a trapezoid over the stored sup|E| samples.  A failed
    minimization marks the result inconclusive rather than raising.
    """
    if not tau1 <= tau2:
        raise ValueError("need tau1 <= tau2")
    grid = traj.grid
    times = traj.times
    t1 = t_ref - tau1
    t2 = t_ref - tau2
    if tau1 == tau2:
        return QuasiMonotonicityResult(tau1, tau2, 0.0, 0.0, 0.0, True, 0.0, False)
    s1 = traj.sample_at(t1)
    s2 = traj.sample_at(t2)
    r1 = minimize_mu(grid, s1["metric"], tau1, tol=tol, max_iter=max_iter, scalar=s1["scalar"])
    r2 = minimize_mu(grid, s2["metric"], tau2, tol=tol, max_iter=max_iter, scalar=s2["scalar"])
    mask = (times >= t2 - 1e-12) & (times <= t1 + 1e-12)
    ts = times[mask]
    sup_e = np.array([s.sup_e for s, m in zip(traj.samples, mask) if m])
    vals = (t_ref - ts) * sup_e**2
    integral_term = float(np.trapezoid(vals, ts))
    rhs = r1.mu + integral_term / 8.0
    slack = 1e-6 * (1.0 + abs(rhs))
    return QuasiMonotonicityResult(
        tau1=tau1,
        tau2=tau2,
        mu1=r1.mu,
        mu2=r2.mu,
        integral_term=integral_term,
        satisfied=bool(r2.mu <= rhs + slack),
        slack=slack,
        inconclusive=not (r1.converged and r2.converged),
        mu1_result=r1,
        mu2_result=r2,
    )
