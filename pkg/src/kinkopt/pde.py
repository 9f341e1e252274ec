"""Kinked coefficient, control problem data, and the state / linearized /
adjoint solvers for ``-div[(b + a(y)) grad y] = u`` with zero boundary values."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import expr as ex
from .mesh import (NodalField, TriMesh, assemble_drift, assemble_drift_transposed,
                   assemble_weighted_stiffness, load_vector, lumped_mass, quad_load,
                   values_of)

logger = logging.getLogger(__name__)

KINK_TOL = 1e-14
STATE_TOL = 1e-10
LINEAR_TOL = 1e-12


class SolverError(RuntimeError):
    """Linear solve breakdown or a singular system."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class CoefficientError(ValueError):
    pass


# -------------------------------------------------------------- coefficient

@dataclass(frozen=True)
class _Branch:
    f: ex.Expr
    d1: ex.Expr
    d2: ex.Expr

    @classmethod
    def from_expr(cls, e):
        e = ex.as_expr(e)
        extra = ex.free_variables(e) - {"y"}
        if extra:
            raise CoefficientError(f"coefficient branch may only depend on y, found {sorted(extra)}")
        d1 = ex.differentiate(e, "y")
        return cls(e, d1, ex.differentiate(d1, "y"))

    def __call__(self, t, which="f"):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(ex.evaluate(getattr(self, which), {"y": t}), t.shape).astype(float)


@dataclass(frozen=True)
class PiecewiseC2Coefficient:
    """``a(t) = a0(t)`` for ``t <= t_bar`` and ``a1(t)`` above; branches are
    expressions in the variable ``y``."""

    a0: _Branch
    a1: _Branch
    t_bar: float
    sigma0: float = field(init=False)
    jump: float = field(init=False)

    def __post_init__(self):
        tb = float(self.t_bar)
        object.__setattr__(self, "t_bar", tb)
        gap = abs(float(self.a0(tb)) - float(self.a1(tb)))
        if gap > 1e-12:
            raise CoefficientError(f"branches must agree at t_bar (gap {gap:.3e})")
        jump = float(self.a0(tb, "d1")) - float(self.a1(tb, "d1"))
        object.__setattr__(self, "jump", jump)
        object.__setattr__(self, "sigma0", abs(jump))
        samples = tb + np.linspace(-1.0, 1.0, 201)
        if np.any(self(samples) < 0):
            raise CoefficientError("coefficient must be nonnegative")

    @classmethod
    def from_strings(cls, a0, a1, t_bar) -> "PiecewiseC2Coefficient":
        return cls(_Branch.from_expr(a0), _Branch.from_expr(a1), t_bar)

    def _pick(self, t, which, at_kink=None):
        t = np.asarray(t, dtype=float)
        out = np.empty(t.shape)
        lo = t <= self.t_bar
        if np.any(lo):
            out[lo] = self.a0(t[lo], which)
        if np.any(~lo):
            out[~lo] = self.a1(t[~lo], which)
        if at_kink is not None:
            out[np.abs(t - self.t_bar) <= KINK_TOL] = at_kink
        return out

    def __call__(self, t):
        return self._pick(t, "f")

    def derivative(self, t):
        """Classical ``a'`` away from the kink, 0 on it."""
        return self._pick(t, "d1", at_kink=0.0)

    def second(self, t):
        """``a''`` away from the kink, 0 on it."""
        return self._pick(t, "d2", at_kink=0.0)

    def branch(self, t, upper, which="f"):
        """Branch values chosen by an explicit side flag instead of by ``t``."""
        t = np.asarray(t, dtype=float)
        out = np.empty(t.shape)
        if np.any(upper):
            out[upper] = self.a1(t[upper], which)
        if np.any(~upper):
            out[~upper] = self.a0(t[~upper], which)
        return out

    def dir_deriv(self, t, s):
        """Directional derivative ``a'(t; s)`` with the one-sided rule at the kink."""
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        t, s = np.broadcast_arrays(t, s)
        out = self.derivative(t) * s
        on = np.abs(t - self.t_bar) <= KINK_TOL
        if np.any(on):
            right = float(self.a1(self.t_bar, "d1"))
            left = float(self.a0(self.t_bar, "d1"))
            out[on] = np.where(s[on] > 0, right * s[on], np.where(s[on] < 0, left * s[on], 0.0))
        return out


# ------------------------------------------------------- kink quadrature

@dataclass(frozen=True, eq=False)
class KinkQuadrature:
    """Per-triangle quadrature that splits triangles cut by ``{y = t_bar}``.

    Uncut triangles get the three edge midpoints. A cut triangle splits into
    the triangle at its lone vertex and a quadrilateral; each piece gets the
    edge-midpoint rule on a fan, so the rule is exact for quadratics on each
    side. Shapes: ``bary`` (M, 9, 3), ``weights`` and ``upper`` (M, 9).
    ``upper`` selects the branch ``a1`` (the side ``y >= t_bar``).
    """

    triangles: np.ndarray
    bary: np.ndarray
    weights: np.ndarray
    upper: np.ndarray

    @classmethod
    def build(cls, mesh: TriMesh, y, t_bar: float) -> "KinkQuadrature":
        yv = values_of(y)[mesh.triangles]
        M = len(yv)
        above = yv >= t_bar
        n_above = above.sum(axis=1)
        cut = (n_above == 1) | (n_above == 2)
        eye = np.eye(3)
        mid = 0.5 * (eye + np.roll(eye, -1, axis=0))  # midpoint k on edge (v_k, v_k+1)
        bary = np.zeros((M, 9, 3))
        weights = np.zeros((M, 9))
        bary[:, :3] = mid
        weights[:, :3] = mesh.areas[:, None] / 3.0
        upper = np.repeat((n_above == 3)[:, None], 9, axis=1)
        idx = np.flatnonzero(cut)
        if len(idx):
            ab = above[idx]
            lone = np.where(n_above[idx] == 1, np.argmax(ab, axis=1), np.argmin(ab, axis=1))
            P = (lone + 1) % 3
            Q = (lone + 2) % 3
            r = np.arange(len(idx))
            yl, yp, yq = yv[idx, lone], yv[idx, P], yv[idx, Q]
            lp = np.clip((t_bar - yl) / (yp - yl), 0.0, 1.0)
            lq = np.clip((t_bar - yl) / (yq - yl), 0.0, 1.0)
            EL, EP, EQ = eye[lone], eye[P], eye[Q]
            X = (1 - lp)[:, None] * EL + lp[:, None] * EP
            Y = (1 - lq)[:, None] * EL + lq[:, None] * EQ
            area = mesh.areas[idx]
            pieces = [((EL, X, Y), lp * lq), ((X, EP, EQ), 1 - lp), ((X, EQ, Y), lp * (1 - lq))]
            for k, ((A, B, C), frac) in enumerate(pieces):
                pts = np.stack([0.5 * (A + B), 0.5 * (B + C), 0.5 * (C + A)], axis=1)
                bary[idx, 3 * k:3 * k + 3] = pts
                weights[idx, 3 * k:3 * k + 3] = (area * frac / 3.0)[:, None]
            lone_up = ab[r, lone]
            upper[idx, 0:3] = lone_up[:, None]
            upper[idx, 3:9] = ~lone_up[:, None]
        return cls(mesh.triangles, bary, weights, upper)

    def eval(self, values) -> np.ndarray:
        """P1 field at the quadrature points, shape (M, 9)."""
        return np.einsum("mqi,mi->mq", self.bary, np.asarray(values, dtype=float)[self.triangles])


def coeff_eval(a: PiecewiseC2Coefficient, t):
    return a(t)


def coeff_dir_deriv(a: PiecewiseC2Coefficient, t, s):
    return a.dir_deriv(t, s)


def coeff_second(a: PiecewiseC2Coefficient, t):
    return a.second(t)


# ------------------------------------------------------------------ problem

@dataclass(frozen=True)
class ControlProblem:
    """Data of ``min int L(x, y) dx + nu/2 ||u||^2`` s.t. the state equation
    and ``alpha <= u <= beta``."""

    b: ex.DiffExpr
    a: PiecewiseC2Coefficient
    L: ex.Expr
    dL_dy: ex.Expr
    d2L_dy2: ex.Expr
    nu: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not self.alpha < self.beta:
            raise ValueError("alpha must be smaller than beta")

    @classmethod
    def from_strings(cls, *, b="1", a0, a1, t_bar, L="0", dL_dy=None, d2L_dy2=None,
                     nu=1.0, alpha=-np.inf, beta=np.inf) -> "ControlProblem":
        Le = ex.as_expr(L)
        dL = ex.as_expr(dL_dy) if dL_dy is not None else ex.differentiate(Le, "y")
        d2L = ex.as_expr(d2L_dy2) if d2L_dy2 is not None else ex.differentiate(dL, "y")
        return cls(ex.field(b), PiecewiseC2Coefficient.from_strings(a0, a1, t_bar),
                   Le, dL, d2L, float(nu), float(alpha), float(beta))

    def b_per_triangle(self, mesh: TriMesh) -> np.ndarray:
        q = mesh.quad_points
        bq = self.b(q[..., 0], q[..., 1])
        bt = bq.mean(axis=1)
        if np.any(bt <= 0):
            raise CoefficientError(f"b must be positive (min {bt.min():.3e})")
        return bt

    def b_lower(self, mesh: TriMesh) -> float:
        q = mesh.quad_points
        return float(np.min(self.b(q[..., 0], q[..., 1])))

    def integrand(self, e: ex.Expr, mesh: TriMesh, y) -> np.ndarray:
        """``e(x, y(x))`` at the edge-midpoint quadrature points."""
        q = mesh.quad_points
        yq = mesh.at_quad(values_of(y))
        out = ex.evaluate(e, {"x1": q[..., 0], "x2": q[..., 1], "y": yq})
        return np.broadcast_to(np.asarray(out, dtype=float), yq.shape)


@dataclass
class SolveStats:
    iterations: int = 0
    final_residual: float = 0.0
    fixed_point_increments: list = field(default_factory=list)
    converged: bool = True
    relaxation: float = 1.0


# -------------------------------------------------------------- linear algebra

def linear_solve(A, b, tol: float = LINEAR_TOL) -> np.ndarray:
    """Direct sparse solve with iterative refinement; the relative residual
    ``||Ax - b|| <= tol ||b||`` is checked before returning."""
    b = np.asarray(b, dtype=float)
    nb = np.linalg.norm(b)
    if nb == 0:
        return np.zeros_like(b)
    A = sp.csc_matrix(A)
    try:
        lu = spla.splu(A)
    except RuntimeError as err:
        raise SolverError(f"factorisation failed: {err}") from err
    x = lu.solve(b)
    res = np.linalg.norm(A @ x - b)
    for _ in range(3):
        if res <= tol * nb:
            break
        x = x + lu.solve(b - A @ x)
        res = np.linalg.norm(A @ x - b)
    if not np.all(np.isfinite(x)) or res > tol * nb:
        raise SolverError(f"linear solve residual {res / nb:.3e} above tolerance {tol:.1e}",
                          residual=res / nb)
    return x


def dirichlet_solve(mesh: TriMesh, A, rhs, tol: float = LINEAR_TOL) -> np.ndarray:
    """Solve with zero values at boundary vertices (rows/columns eliminated)."""
    inner = np.flatnonzero(mesh.interior)
    A = sp.csr_matrix(A)
    x = np.zeros(mesh.n_vertices)
    if len(inner):
        x[inner] = linear_solve(A[inner][:, inner], np.asarray(rhs)[inner], tol)
    return x


def _load(mesh: TriMesh, u) -> np.ndarray:
    """Load vector of a control. Nodal controls use the lumped mass, so the
    control space carries the vertex-rule inner product; callbacks use the
    edge-midpoint rule."""
    if callable(u) and not isinstance(u, NodalField):
        return load_vector(mesh, u)
    vals = values_of(u) if isinstance(u, NodalField) else np.asarray(u, dtype=float)
    vals = np.broadcast_to(vals, (mesh.n_vertices,))
    return lumped_mass(mesh) * vals


def state_coefficient(problem: ControlProblem, mesh: TriMesh, y, quad: "KinkQuadrature" = None) -> np.ndarray:
    """``b_T + mean_T a(y)`` per triangle, with the mean taken by a rule that is
    exact for quadratic branches on both sides of the kink."""
    quad = KinkQuadrature.build(mesh, y, problem.a.t_bar) if quad is None else quad
    yq = quad.eval(values_of(y))
    a_mean = np.sum(quad.weights * problem.a.branch(yq, quad.upper, "f"), axis=1) / mesh.areas
    coeff = problem.b_per_triangle(mesh) + a_mean
    if np.any(coeff <= 0):
        raise CoefficientError(f"state coefficient not positive (min {coeff.min():.3e})")
    return coeff


def drift_weights(problem: ControlProblem, mesh: TriMesh, y, quad: "KinkQuadrature" = None) -> np.ndarray:
    """``int_T a'(y) phi_i dx`` per triangle and local vertex, shape (M, 3);
    the derivative of ``|T| mean_T a(y)`` with respect to the nodal values."""
    quad = KinkQuadrature.build(mesh, y, problem.a.t_bar) if quad is None else quad
    yq = quad.eval(values_of(y))
    d = quad.weights * problem.a.branch(yq, quad.upper, "d1")
    return np.einsum("mq,mqi->mi", d, quad.bary)


def linearized_operator(problem: ControlProblem, mesh: TriMesh, y):
    """Exact Jacobian of the discrete state residual ``K(y) y``."""
    quad = KinkQuadrature.build(mesh, y, problem.a.t_bar)
    coeff = state_coefficient(problem, mesh, y, quad)
    return (assemble_weighted_stiffness(mesh, coeff)
            + assemble_drift(mesh, mesh.gradient(values_of(y)), drift_weights(problem, mesh, y, quad)))


def adjoint_operator(problem: ControlProblem, mesh: TriMesh, y):
    """Exact transpose of :func:`linearized_operator`."""
    quad = KinkQuadrature.build(mesh, y, problem.a.t_bar)
    coeff = state_coefficient(problem, mesh, y, quad)
    return (assemble_weighted_stiffness(mesh, coeff)
            + assemble_drift_transposed(mesh, mesh.gradient(values_of(y)),
                                        drift_weights(problem, mesh, y, quad)))


# ------------------------------------------------------------------ solvers

def solve_state(problem: ControlProblem, mesh: TriMesh, u, tol: float = STATE_TOL,
                max_iter: int = 500, y0=None, linear_tol: float = LINEAR_TOL):
    """Picard iteration with the coefficient frozen at its triangle means.

    ``u`` is a NodalField, nodal array, constant, or a vectorised callback
    ``u(x1, x2)``. Returns ``(y, stats)``; ``stats.converged`` is False when
    ``max_iter`` is exhausted (the last iterate is returned).
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    F = _load(mesh, u)
    if not np.all(np.isfinite(F)):
        raise ValueError("control must be finite")
    y = np.zeros(mesh.n_vertices) if y0 is None else values_of(y0).copy()
    stats = SolveStats(converged=False)
    omega = 1.0
    growth = 0
    for k in range(1, max_iter + 1):
        A = assemble_weighted_stiffness(mesh, state_coefficient(problem, mesh, y))
        y_new = dirichlet_solve(mesh, A, F, linear_tol)
        step = y_new - y
        inc = float(np.max(np.abs(step))) if len(step) else 0.0
        incs = stats.fixed_point_increments
        if incs and inc > incs[-1]:
            growth += 1
        else:
            growth = 0
        if growth >= 3 and omega > 1 / 64:
            omega *= 0.5
            growth = 0
            logger.info("state iteration diverging; relaxation set to %g", omega)
        y = y + omega * step
        incs.append(inc)
        stats.iterations = k
        if inc <= tol:
            stats.converged = True
            break
    inner = mesh.interior
    coeff = state_coefficient(problem, mesh, y)
    r = (assemble_weighted_stiffness(mesh, coeff) @ y - F)[inner]
    stats.final_residual = float(np.linalg.norm(r))
    stats.relaxation = omega
    if not stats.converged:
        logger.warning("state iteration did not converge in %d steps (last increment %.3e)",
                       max_iter, stats.fixed_point_increments[-1])
    return NodalField(mesh, y), stats


def solve_linearized(problem: ControlProblem, mesh: TriMesh, y, v, tol: float = LINEAR_TOL) -> NodalField:
    """``z = S'(u) v``: P1 solution of
    ``-div[(b + a(y)) grad z + 1_{y != t_bar} a'(y) z grad y] = v``."""
    A = linearized_operator(problem, mesh, y)
    return NodalField(mesh, dirichlet_solve(mesh, A, _load(mesh, v), tol))


def solve_adjoint(problem: ControlProblem, mesh: TriMesh, y, rhs, tol: float = LINEAR_TOL) -> NodalField:
    """P1 solution of ``-div[(b + a(y)) grad phi] + 1_{y != t_bar} a'(y) grad y . grad phi = rhs``.

    The system matrix is the exact transpose of the linearized one. ``rhs``
    may be a NodalField, a callback ``f(x1, x2)``, or an expression in
    ``(x1, x2, y)`` evaluated along ``y``.
    """
    if isinstance(rhs, (ex.Num, ex.Var, ex.Neg, ex.BinOp, ex.Call, str)):
        F = quad_load(mesh, problem.integrand(ex.as_expr(rhs), mesh, y))
    else:
        F = _load(mesh, rhs)
    A = adjoint_operator(problem, mesh, y)
    return NodalField(mesh, dirichlet_solve(mesh, A, F, tol))
