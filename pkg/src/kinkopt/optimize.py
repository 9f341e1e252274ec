"""Reduced objective, its gradient, a projected-gradient solver with Armijo
backtracking, first-order residuals, and sampled second-order checks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .curvature import CurvatureReport, curvature_at
from .mesh import NodalField, TriMesh, assemble_lumped_mass
from .pde import ControlProblem, SolverError, solve_adjoint, solve_state

logger = logging.getLogger(__name__)

STATE_TOL = 1e-12
_ROUNDOFF = 1e-12


class NotStationaryError(ValueError):
    pass


@dataclass
class OptimizerParams:
    step0: float | None = None  # defaults to 1/nu
    max_iter: int = 500
    tol_kkt: float = 1e-8
    backtrack: float = 0.5
    armijo: float = 1e-4

    def __post_init__(self):
        if self.step0 is not None and not self.step0 > 0:
            raise ValueError("step0 must be positive")
        if not (self.max_iter > 0 and self.tol_kkt > 0):
            raise ValueError("max_iter and tol_kkt must be positive")
        if not (0 < self.backtrack < 1 and 0 < self.armijo < 1):
            raise ValueError("backtrack and armijo must lie in (0, 1)")


@dataclass
class OptimizeStats:
    iterations: int = 0
    converged: bool = False
    kkt_residual: float = float("inf")
    j_history: list = field(default_factory=list)
    kkt_history: list = field(default_factory=list)
    steps: list = field(default_factory=list)


def _as_control(mesh: TriMesh, u) -> NodalField:
    if isinstance(u, NodalField):
        return u
    if callable(u):
        return NodalField.interpolate(mesh, u)
    return NodalField(mesh, np.broadcast_to(np.asarray(u, dtype=float), (mesh.n_vertices,)).copy())


def _state(problem, mesh, u, y0=None):
    y, stats = solve_state(problem, mesh, u, tol=STATE_TOL, y0=y0)
    if not stats.converged:
        raise SolverError("state iteration did not converge", stats.final_residual)
    return y


def _j(problem, mesh, u: NodalField, y: NodalField) -> float:
    tracking = float(np.sum(mesh.quad_weights * problem.integrand(problem.L, mesh, y)))
    M = assemble_lumped_mass(mesh)
    return tracking + 0.5 * problem.nu * float(u.values @ (M @ u.values))


def objective(problem: ControlProblem, mesh: TriMesh, u) -> float:
    """``int L(x, S(u)) dx + nu/2 ||u||^2``."""
    u = _as_control(mesh, u)
    return _j(problem, mesh, u, _state(problem, mesh, u))


def adjoint_state(problem: ControlProblem, mesh: TriMesh, y: NodalField) -> NodalField:
    return solve_adjoint(problem, mesh, y, problem.dL_dy)


def gradient(problem: ControlProblem, mesh: TriMesh, u) -> NodalField:
    """``phi_u + nu u``, the representative of ``j'(u)`` in the control inner
    product (lumped mass, i.e. the vertex rule)."""
    u = _as_control(mesh, u)
    y = _state(problem, mesh, u)
    return adjoint_state(problem, mesh, y) + problem.nu * u


def _clamp(problem, values):
    return np.clip(values, problem.alpha, problem.beta)


def _m_norm(M, values) -> float:
    return float(np.sqrt(max(values @ (M @ values), 0.0)))


def kkt_residual(problem: ControlProblem, mesh: TriMesh, u, phi: NodalField = None) -> float:
    """``||u - clamp(-phi_u / nu, alpha, beta)||_{L2}``."""
    u = _as_control(mesh, u)
    if phi is None:
        phi = adjoint_state(problem, mesh, _state(problem, mesh, u))
    r = u.values - _clamp(problem, -phi.values / problem.nu)
    return _m_norm(assemble_lumped_mass(mesh), r)


def projected_gradient_solve(problem: ControlProblem, mesh: TriMesh, u0, params: OptimizerParams = None):
    """Projected gradient with Armijo backtracking; returns ``(u_bar, stats)``.

    Non-convergence within ``max_iter`` is flagged in ``stats.converged`` and
    the last iterate is returned.
    """
    params = params or OptimizerParams()
    step0 = 1.0 / problem.nu if params.step0 is None else params.step0
    M = assemble_lumped_mass(mesh)
    u = _as_control(mesh, u0).with_values(_clamp(problem, _as_control(mesh, u0).values))
    y = _state(problem, mesh, u)
    j = _j(problem, mesh, u, y)
    stats = OptimizeStats(j_history=[j])
    step = step0
    phi = adjoint_state(problem, mesh, y)
    for k in range(params.max_iter + 1):
        kkt = _m_norm(M, u.values - _clamp(problem, -phi.values / problem.nu))
        stats.kkt_history.append(kkt)
        stats.kkt_residual = kkt
        if kkt <= params.tol_kkt:
            stats.converged = True
            break
        if k == params.max_iter:
            break
        g = phi.values + problem.nu * u.values
        step = min(step0, 2 * step)
        while True:
            trial = u.with_values(_clamp(problem, u.values - step * g))
            d = trial.values - u.values
            slope = float(g @ (M @ d))
            y_trial = _state(problem, mesh, trial, y0=y)
            j_trial = _j(problem, mesh, trial, y_trial)
            phi_trial = None
            if j_trial <= j + params.armijo * slope:
                break
            if abs(j_trial - j) <= _ROUNDOFF * max(abs(j), abs(j_trial)):
                # change of j below its resolution: judge the step by the
                # trapezoid estimate of j(u + d) - j(u) built from gradients
                phi_trial = adjoint_state(problem, mesh, y_trial)
                g_trial = phi_trial.values + problem.nu * trial.values
                if 0.5 * float((g + g_trial) @ (M @ d)) <= params.armijo * slope:
                    break
            if step < 1e-14 * step0:
                break
            step *= params.backtrack
        if j_trial > j + _ROUNDOFF * abs(j):
            logger.warning("line search failed at iteration %d", k)
            break
        u, y, j = trial, y_trial, j_trial
        phi = adjoint_state(problem, mesh, y) if phi_trial is None else phi_trial
        stats.j_history.append(j)
        stats.steps.append(step)
        stats.iterations = k + 1
    if not stats.converged:
        logger.warning("projected gradient stopped with kkt residual %.3e", stats.kkt_residual)
    return u, stats


def variational_inequality(problem: ControlProblem, mesh: TriMesh, u_bar, u) -> float:
    """``int (phi_bar + nu u_bar)(u - u_bar) dx``; nonnegative at stationary points."""
    u_bar = _as_control(mesh, u_bar)
    u = _as_control(mesh, u)
    g = gradient(problem, mesh, u_bar)
    return float(g.values @ (assemble_lumped_mass(mesh) @ (u.values - u_bar.values)))


def critical_cone_project(problem: ControlProblem, u_bar, phi_bar: NodalField, v,
                          tol_active: float = 1e-6):
    """Nodewise projection onto the critical cone; returns ``(v_proj, violation)``
    with ``violation = ||v - v_proj||_{L2}``."""
    mesh = phi_bar.mesh
    u_bar = _as_control(mesh, u_bar)
    v = _as_control(mesh, v)
    p = v.values.copy()
    ub = u_bar.values
    lower = np.abs(ub - problem.alpha) <= tol_active
    upper = np.abs(ub - problem.beta) <= tol_active
    p[lower] = np.maximum(p[lower], 0.0)
    p[upper] = np.minimum(p[upper], 0.0)
    p[np.abs(phi_bar.values + problem.nu * ub) > tol_active] = 0.0
    return v.with_values(p), _m_norm(assemble_lumped_mass(mesh), v.values - p)


@dataclass
class SONCReport:
    direction_id: int
    q_s: float
    q_1: float
    q_2: float
    cone_violation: float
    verdict: str
    note: str = ""

    @property
    def q_total(self) -> float:
        return self.q_s + self.q_1 + self.q_2

    def row(self):
        return (self.direction_id, self.q_s, self.q_1, self.q_2, self.q_total, self.cone_violation)


def sample_directions(mesh: TriMesh, count: int, seed: int = 0, n_smooth: int = 10) -> list:
    """``count - n_smooth`` hat functions at random interior nodes followed by
    ``n_smooth`` random Gaussian bumps."""
    rng = np.random.default_rng(seed)
    inner = np.flatnonzero(mesh.interior)
    n_hat = max(count - n_smooth, 0)
    out = []
    for i in rng.choice(inner, size=min(n_hat, len(inner)), replace=False):
        e = np.zeros(mesh.n_vertices)
        e[i] = 1.0
        out.append(NodalField(mesh, e))
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    x = mesh.vertices
    for _ in range(min(n_smooth, count)):
        c = lo + rng.random(2) * (hi - lo)
        width = (0.1 + 0.3 * rng.random()) * float(np.max(hi - lo))
        sign = rng.choice([-1.0, 1.0])
        out.append(NodalField(mesh, sign * np.exp(-np.sum((x - c) ** 2, axis=1) / width**2)))
    return out


def check_soc(problem: ControlProblem, mesh: TriMesh, u_bar, directions=20, mode: str = "necessary",
              seed: int = 0, tol_kkt: float = 1e-8, tol_q: float = 1e-10,
              tol_active: float = 1e-6) -> list:
    """Curvature along sampled directions projected onto the critical cone
    and normalised in L2. In ``necessary`` mode a direction with
    ``Q < -tol_q`` is a violation; ``sufficient`` mode labels each direction by
    the sign of ``Q`` (a sampled, heuristic certificate)."""
    if mode not in ("necessary", "sufficient"):
        raise ValueError("mode must be 'necessary' or 'sufficient'")
    u_bar = _as_control(mesh, u_bar)
    y = _state(problem, mesh, u_bar)
    phi = adjoint_state(problem, mesh, y)
    kkt = kkt_residual(problem, mesh, u_bar, phi)
    if kkt > 10 * tol_kkt:
        raise NotStationaryError(f"kkt residual {kkt:.3e} exceeds 10 * tol_kkt = {10 * tol_kkt:.1e}")
    if isinstance(directions, int):
        directions = sample_directions(mesh, directions, seed)
    M = assemble_lumped_mass(mesh)
    reports = []
    for k, v in enumerate(directions):
        vp, viol = critical_cone_project(problem, u_bar, phi, v, tol_active)
        norm = _m_norm(M, vp.values)
        if norm == 0:
            reports.append(SONCReport(k, 0.0, 0.0, 0.0, viol, "skipped", "direction projects to 0"))
            continue
        rep: CurvatureReport = curvature_at(problem, y, phi, vp * (1.0 / norm))
        q = rep.total
        if mode == "necessary":
            verdict = "violated" if q < -tol_q else "ok"
        else:
            verdict = "positive" if q > tol_q else "nonpositive"
        reports.append(SONCReport(k, rep.q_s, rep.q_1, rep.q_2, viol, verdict))
    return reports


def min_curvature(reports) -> float:
    vals = [r.q_total for r in reports if r.verdict != "skipped"]
    return min(vals) if vals else float("nan")
