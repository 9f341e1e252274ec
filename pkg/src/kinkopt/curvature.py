"""Second-order (curvature) terms of the reduced objective: the smooth part,
the first-order nonsmooth part, the level-set part in explicit form and its
difference-quotient estimate, plus the band-integral limit experiments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .geometry import clip_halfplane, fan_quadrature
from .levelset import THETA_GRAD, classify_neighborhood, curve_integral, extract_level_set
from .mesh import NodalField, TriMesh, lumped_mass
from .pde import ControlProblem, KinkQuadrature, SolverError, solve_adjoint, solve_linearized, solve_state


@dataclass
class CurvatureReport:
    q_s: float
    q_1: float
    q_2: float
    levelset_term_detail: list = field(default_factory=list)
    filtered_components: list = field(default_factory=list)
    note: str = ""

    @property
    def total(self) -> float:
        return self.q_s + self.q_1 + self.q_2

    def to_json(self) -> dict:
        return {"q_s": self.q_s, "q_1": self.q_1, "q_2": self.q_2, "total": self.total,
                "levelset_term_detail": self.levelset_term_detail,
                "filtered_components": self.filtered_components, "note": self.note}


@dataclass
class LimitExperiment:
    s_list: list
    values: list
    target: float
    reference: float = 0.0  # A_n target, the scale for relative errors

    @property
    def errors(self) -> list:
        return [abs(v - self.target) for v in self.values]

    def rows(self):
        return [(s, v, self.target, e) for s, v, e in zip(self.s_list, self.values, self.errors)]


def _grad_at(phi, mesh: TriMesh, pts, tri):
    """Gradient of a P1 field or analytic field at points inside ``tri``."""
    if isinstance(phi, NodalField):
        return np.broadcast_to(phi.gradient()[tri], pts.shape)
    f = ex.field(phi)
    return f.grad(pts[..., 0], pts[..., 1])


# ------------------------------------------------------------ smooth parts

def compute_Qs(problem: ControlProblem, y: NodalField, phi: NodalField,
               v1, v2, z1: NodalField = None, z2: NodalField = None) -> float:
    """``1/2 int L_yy z1 z2 + nu/2 int v1 v2 - 1/2 int 1_{y != t} a''(y) z1 z2 grad y . grad phi``."""
    mesh = y.mesh
    v1 = _nodal(mesh, v1)
    v2 = _nodal(mesh, v2)
    z1 = solve_linearized(problem, mesh, y, v1) if z1 is None else z1
    z2 = solve_linearized(problem, mesh, y, v2) if z2 is None else z2
    w = mesh.quad_weights
    zz = mesh.at_quad(z1.values) * mesh.at_quad(z2.values)
    lyy = problem.integrand(problem.d2L_dy2, mesh, y)
    # control inner product: vertex rule, as in the control cost
    vv = float(np.sum(lumped_mass(mesh) * v1.values * v2.values))
    smooth = float(np.sum(w * 0.5 * lyy * zz)) + 0.5 * problem.nu * vv
    # the a'' term on the kink-split rule; each piece uses its own branch
    kq = KinkQuadrature.build(mesh, y, problem.a.t_bar)
    yq = kq.eval(y.values)
    a2 = problem.a.branch(yq, kq.upper, "d2")
    gg = np.einsum("md,md->m", y.gradient(), phi.gradient())[:, None]
    curv = float(np.sum(kq.weights * a2 * kq.eval(z1.values) * kq.eval(z2.values) * gg))
    return smooth - 0.5 * curv


def compute_Q1(problem: ControlProblem, y: NodalField, phi: NodalField,
               v1, v2, z1: NodalField = None, z2: NodalField = None) -> float:
    """``-1/2 int [a'(y; z1) grad z2 + a'(y; z2) grad z1] . grad phi``.

    Integrated on the kink-split rule, where every piece lies on one side of
    the kink, so ``a'(y; z) = a_k'(y) z`` with that side's branch ``a_k``.
    """
    mesh = y.mesh
    z1 = solve_linearized(problem, mesh, y, _nodal(mesh, v1)) if z1 is None else z1
    z2 = solve_linearized(problem, mesh, y, _nodal(mesh, v2)) if z2 is None else z2
    kq = KinkQuadrature.build(mesh, y, problem.a.t_bar)
    a1 = problem.a.branch(kq.eval(y.values), kq.upper, "d1")
    gp = phi.gradient()
    g2 = np.einsum("md,md->m", z2.gradient(), gp)[:, None]
    g1 = np.einsum("md,md->m", z1.gradient(), gp)[:, None]
    d1 = a1 * kq.eval(z1.values)
    d2 = a1 * kq.eval(z2.values)
    return float(-0.5 * np.sum(kq.weights * (d1 * g2 + d2 * g1)))


def _nodal(mesh, v):
    if isinstance(v, NodalField):
        return v
    return NodalField.interpolate(mesh, v)


# --------------------------------------------------------- level-set part

def _levelset_integral(y_bar: NodalField, t: float, w: NodalField, phi, theta_grad):
    """``oint w^2 grad y . grad phi / |grad y|`` per component of ``{y_bar = t}``;
    components below ``theta_grad`` are filtered (contribute 0)."""
    mesh = y_bar.mesh
    dec = extract_level_set(y_bar, t)
    gy = y_bar.gradient()
    gn = np.linalg.norm(gy, axis=1)
    detail, filtered = [], []
    total = 0.0
    for k, c in enumerate(dec):
        if c.min_grad < theta_grad:
            filtered.append({"component": k, "min_grad": c.min_grad, "length": c.length})
            continue

        def f(x1, x2, tri):
            pts = np.stack([x1, x2], axis=-1)
            ww = w.at(pts, tri)
            gp = _grad_at(phi, mesh, pts, tri)
            return ww**2 * np.einsum("id,id->i", gy[tri], gp) / gn[tri]

        val = curve_integral(c, f, per_triangle=True)
        detail.append({"component": k, "closed": c.closed, "length": c.length,
                       "min_grad": c.min_grad, "integral": val})
        total += val
    return total, detail, filtered, len(dec)


def compute_Q2_explicit(problem: ControlProblem, y_bar: NodalField, phi, z_v: NodalField,
                        theta_grad: float = THETA_GRAD):
    """``1/2 (a0'(t) - a1'(t)) oint_{y_bar = t} z_v^2 grad y_bar . grad phi / |grad y_bar|``.

    Returns ``(value, detail)``; ``detail`` lists per-component contributions
    (already multiplied by the prefactor), filtered components and a note.
    """
    t = problem.a.t_bar
    integral, detail, filtered, count = _levelset_integral(y_bar, t, z_v, phi, theta_grad)
    factor = 0.5 * problem.a.jump
    for d in detail:
        d["contribution"] = factor * d["integral"]
    note = "" if count else "level set empty"
    return factor * integral, {"components": detail, "filtered": filtered, "note": note}


def compute_Q_total(problem: ControlProblem, mesh: TriMesh, u_bar, v,
                    theta_grad: float = THETA_GRAD, tol: float = 1e-12) -> CurvatureReport:
    y, stats = solve_state(problem, mesh, u_bar, tol=tol)
    if not stats.converged:
        raise SolverError("state solve did not converge", stats.final_residual)
    phi = solve_adjoint(problem, mesh, y, problem.dL_dy)
    return curvature_at(problem, y, phi, _nodal(mesh, v), theta_grad)


def curvature_at(problem: ControlProblem, y: NodalField, phi: NodalField, v: NodalField,
                 theta_grad: float = THETA_GRAD, z: NodalField = None) -> CurvatureReport:
    """All curvature parts at a known state/adjoint pair."""
    z = solve_linearized(problem, y.mesh, y, v) if z is None else z
    qs = compute_Qs(problem, y, phi, v, v, z, z)
    q1 = compute_Q1(problem, y, phi, v, v, z, z)
    q2, detail = compute_Q2_explicit(problem, y, phi, z, theta_grad)
    return CurvatureReport(qs, q1, q2, detail["components"], detail["filtered"], detail["note"])


# ------------------------------------------------------ band integrals

def _band_integral(y_bar: NodalField, y_n: NodalField, t: float, delta: float, factor,
                   phi, triangles=None) -> float:
    """``int factor(x) [1_{O2} - 1_{O3}] grad y_bar . grad phi`` with
    ``O2 = {y_bar in (t, t+delta), y_n in (t-delta, t]}`` and
    ``O3 = {y_bar in (t-delta, t), y_n in [t, t+delta)}``, clipped exactly per
    triangle. ``factor(pts, tri)`` is evaluated at fan-quadrature points."""
    mesh = y_bar.mesh
    cb, gb = mesh.affine(y_bar.values)
    cn, gn = mesh.affine(y_n.values)
    vb = y_bar.values[mesh.triangles]
    vn = y_n.values[mesh.triangles]
    bmin, bmax, nmin, nmax = vb.min(1), vb.max(1), vn.min(1), vn.max(1)
    cand2 = (bmax > t) & (bmin < t + delta) & (nmax > t - delta) & (nmin <= t)
    cand3 = (bmax > t - delta) & (bmin < t) & (nmax >= t) & (nmin < t + delta)
    if triangles is not None:
        sel = np.zeros(mesh.n_triangles, dtype=bool)
        sel[triangles] = True
        cand2 &= sel
        cand3 &= sel
    total = 0.0
    for sign, cand, (b_lo, b_hi, n_lo, n_hi) in (
            (1.0, cand2, (t, t + delta, t - delta, t)),
            (-1.0, cand3, (t - delta, t, t, t + delta))):
        for m in np.flatnonzero(cand):
            poly = mesh.corners[m]
            poly = clip_halfplane(poly, cb[m], gb[m], "ge", b_lo)
            poly = clip_halfplane(poly, cb[m], gb[m], "le", b_hi)
            poly = clip_halfplane(poly, cn[m], gn[m], "ge", n_lo)
            poly = clip_halfplane(poly, cn[m], gn[m], "le", n_hi)
            pts, wts = fan_quadrature(poly)
            if not len(wts):
                continue
            gp = _grad_at(phi, mesh, pts, m)
            val = factor(pts, m) * (gp @ gb[m])
            total += sign * float(np.sum(wts * val))
    return total


_FACTORS = {
    "A": lambda t, yb, yn: t - yn,
    "A_tilde": lambda t, yb, yn: t - yb,
    "combined": lambda t, yb, yn: 2 * t - yb - yn,
}
_TARGET_SIGN = {"A": 1.0, "A_tilde": -1.0, "combined": 0.0}


def _limit_experiment(kind, y_bar: NodalField, w: NodalField, phi, t_bar, component_index,
                      epsilon, s_list, delta=None, theta_grad=THETA_GRAD) -> LimitExperiment:
    s_list = [float(s) for s in s_list]
    if any(s <= 0 for s in s_list) or any(a <= b for a, b in zip(s_list, s_list[1:])):
        raise ValueError("s_list must be positive and strictly decreasing")
    mesh = y_bar.mesh
    w = _nodal(mesh, w)
    delta = 10 * max(s_list) if delta is None else float(delta)
    dec = extract_level_set(y_bar, t_bar)
    if not len(dec):
        return LimitExperiment(s_list, [0.0] * len(s_list), 0.0, 0.0)
    nb = classify_neighborhood(y_bar, dec, component_index, epsilon)
    band = np.flatnonzero(nb.band)
    curve = dec[component_index]
    if curve.min_grad < theta_grad:
        target = 0.0
    else:
        gy = y_bar.gradient()
        gn = np.linalg.norm(gy, axis=1)

        def f(x1, x2, tri):
            pts = np.stack([x1, x2], axis=-1)
            return w.at(pts, tri) ** 2 * np.einsum("id,id->i", gy[tri], _grad_at(phi, mesh, pts, tri)) / gn[tri]

        target = 0.5 * curve_integral(curve, f, per_triangle=True)
    fac = _FACTORS[kind]
    values = []
    for s in s_list:
        y_n = y_bar + s * w

        def factor(pts, m, y_n=y_n):
            return fac(t_bar, y_bar.at(pts, m), y_n.at(pts, m))

        values.append(_band_integral(y_bar, y_n, t_bar, delta, factor, phi, band) / s**2)
    return LimitExperiment(s_list, values, _TARGET_SIGN[kind] * target, target)


def an_experiment(y_bar, w, phi, t_bar, component_index, epsilon, s_list, delta=None,
                  theta_grad=THETA_GRAD) -> LimitExperiment:
    """``A_n / s^2`` with factor ``(t - y_n)``, ``y_n = y_bar + s w``, restricted to
    the ``epsilon``-band of one component; target ``1/2 oint w^2 grad y . grad phi / |grad y|``."""
    return _limit_experiment("A", y_bar, w, phi, t_bar, component_index, epsilon, s_list,
                             delta, theta_grad)


def an_tilde_experiment(y_bar, w, phi, t_bar, component_index, epsilon, s_list, delta=None,
                        theta_grad=THETA_GRAD) -> LimitExperiment:
    """As :func:`an_experiment` with factor ``(t - y_bar)``; the target is negated."""
    return _limit_experiment("A_tilde", y_bar, w, phi, t_bar, component_index, epsilon, s_list,
                             delta, theta_grad)


def combined_limit(y_bar, w, phi, t_bar, component_index, epsilon, s_list, delta=None,
                   theta_grad=THETA_GRAD) -> LimitExperiment:
    """Factor ``(2t - y_bar - y_n)``; the target is 0."""
    return _limit_experiment("combined", y_bar, w, phi, t_bar, component_index, epsilon, s_list,
                             delta, theta_grad)


@dataclass
class Q2Estimate:
    s_list: list
    values: list
    final: float


def q2_liminf_estimate(problem: ControlProblem, mesh: TriMesh, u_bar, v, s_list,
                       delta=None, tol: float = 1e-12) -> Q2Estimate:
    """``(a0'(t) - a1'(t)) / s^2 int (t - S(u + s v)) [1_{O2} - 1_{O3}] grad y_bar . grad phi_bar``
    along one geometric family of ``s``; ``final`` is the value at the smallest ``s``.

    ``delta`` defaults to ``max(10 max s, 2 max_s ||y_s - y_bar||_inf)`` so the
    bands equal the sign-crossing sets.
    """
    s_list = [float(s) for s in s_list]
    if any(s <= 0 for s in s_list) or any(a <= b for a, b in zip(s_list, s_list[1:])):
        raise ValueError("s_list must be positive and strictly decreasing")
    t = problem.a.t_bar
    u_bar = _nodal(mesh, u_bar)
    v = _nodal(mesh, v)
    y_bar, st = solve_state(problem, mesh, u_bar, tol=tol)
    if not st.converged:
        raise SolverError("state solve did not converge", st.final_residual)
    jump = problem.a.jump
    if jump == 0 or not np.any(v.values):
        return Q2Estimate(s_list, [0.0] * len(s_list), 0.0)
    phi = solve_adjoint(problem, mesh, y_bar, problem.dL_dy)
    states = []
    for s in s_list:
        y_s, st = solve_state(problem, mesh, u_bar + s * v, tol=tol, y0=y_bar)
        if not st.converged:
            raise SolverError(f"state solve did not converge at s={s:g}", st.final_residual)
        states.append(y_s)
    if delta is None:
        spread = max(float(np.max(np.abs(y_s.values - y_bar.values))) for y_s in states)
        delta = max(10 * max(s_list), 2 * spread)
    values = []
    for s, y_s in zip(s_list, states):

        def factor(pts, m, y_s=y_s):
            return t - y_s.at(pts, m)

        values.append(jump * _band_integral(y_bar, y_s, t, delta, factor, phi) / s**2)
    return Q2Estimate(s_list, values, values[-1])
