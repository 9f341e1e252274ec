"""Signed regions between two level sets and a numerical check of Green's
first identity on them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .geometry import clip_convex, clip_halfplane, fan_quadrature, polygon_area
from .levelset import THETA_GRAD, extract_level_set
from .mesh import NodalField


class GreenHypothesisError(ValueError):
    """A boundary curve has a vanishing gradient, or the window holds more
    than one component of a level set."""


@dataclass(frozen=True)
class RegionPiece:
    triangle: int
    sign: int
    polygon: np.ndarray

    @property
    def area(self) -> float:
        return abs(polygon_area(self.polygon))


@dataclass(frozen=True, eq=False)
class RegionIndicator:
    """Polygonal pieces of ``S+ = {y1 > t > y2}`` (sign +1) and
    ``S- = {y1 < t < y2}`` (sign -1)."""

    t: float
    pieces: list = field(default_factory=list)

    def area(self, sign: int) -> float:
        return sum(p.area for p in self.pieces if p.sign == sign)

    @property
    def signed_area(self) -> float:
        return sum(p.sign * p.area for p in self.pieces)

    def integrate(self, f) -> float:
        """``int (1_{S+} - 1_{S-}) f dx`` with ``f(points, tri)`` vectorised;
        exact for quadratics."""
        total = 0.0
        for p in self.pieces:
            pts, w = fan_quadrature(p.polygon)
            if len(w):
                total += p.sign * float(np.sum(w * f(pts, p.triangle)))
        return total


def region_split(y1: NodalField, y2: NodalField, t: float, window=None) -> RegionIndicator:
    if y1.mesh is not y2.mesh:
        raise ValueError("y1 and y2 must live on the same mesh")
    mesh = y1.mesh
    c1, g1 = mesh.affine(y1.values)
    c2, g2 = mesh.affine(y2.values)
    v1 = y1.values[mesh.triangles]
    v2 = y2.values[mesh.triangles]
    win = None if window is None else np.asarray(window, dtype=float)
    pieces = []
    # S+: y1 >= t and y2 <= t ; S-: y1 <= t and y2 >= t
    for sign, k1, k2 in ((1, "ge", "le"), (-1, "le", "ge")):
        if sign == 1:
            cand = (v1.max(axis=1) > t) & (v2.min(axis=1) < t)
        else:
            cand = (v1.min(axis=1) < t) & (v2.max(axis=1) > t)
        for m in np.flatnonzero(cand):
            poly = clip_halfplane(mesh.corners[m], c1[m], g1[m], k1, t)
            poly = clip_halfplane(poly, c2[m], g2[m], k2, t)
            if win is not None and len(poly):
                poly = clip_convex(poly, win)
            if len(poly) >= 3 and abs(polygon_area(poly)) > 0:
                pieces.append(RegionPiece(int(m), sign, poly))
    return RegionIndicator(float(t), pieces)


def _clip_segments(a, b, window):
    """Clip segments ``[a_i, b_i]`` to a convex counterclockwise window."""
    lo = np.zeros(len(a))
    hi = np.ones(len(a))
    w = np.asarray(window, dtype=float)
    d = b - a
    for i in range(len(w)):
        p, q = w[i], w[(i + 1) % len(w)]
        e = q - p
        n = np.array([-e[1], e[0]])
        fa = (a - p) @ n
        fd = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = -fa / fd
        entering = fd > 0
        leaving = fd < 0
        lo = np.where(entering, np.maximum(lo, lam), lo)
        hi = np.where(leaving, np.minimum(hi, lam), hi)
        outside = (fd == 0) & (fa < 0)
        hi = np.where(outside, -1.0, hi)
    keep = hi > lo
    return a[keep] + lo[keep, None] * d[keep], a[keep] + hi[keep, None] * d[keep], keep


def _point_eval(v, pts, tri):
    """Values and gradients of ``v`` at ``pts`` (inside triangles ``tri``)."""
    if isinstance(v, NodalField):
        tri = np.broadcast_to(tri, pts.shape[:-1])
        return v.at(pts, tri), v.gradient()[tri]
    return v(pts[..., 0], pts[..., 1]), v.grad(pts[..., 0], pts[..., 1])


def _as_field(v):
    if isinstance(v, NodalField):
        return v
    return ex.field(v)


@dataclass
class GreenResult:
    lhs: float
    rhs: float
    residual: float
    h_max: float
    volume_term: float
    curve_terms: tuple


def _curve_flux(dec, v, phi, window, theta_grad, normal_field, label):
    comps = []
    for k, c in enumerate(dec):
        a, b = c.starts, c.ends
        tris = c.triangles
        if window is not None:
            a, b, keep = _clip_segments(a, b, window)
            tris = tris[keep]
        if len(a) and np.linalg.norm(b - a, axis=1).sum() > 0:
            comps.append((k, c, a, b, tris))
    if len(comps) > 1:
        raise GreenHypothesisError(f"{label}: {len(comps)} components inside the window, expected one")
    total = 0.0
    grads = dec.field.gradient()
    for k, c, a, b, tris in comps:
        if c.min_grad < theta_grad:
            raise GreenHypothesisError(f"{label}: component {k} has min |grad| = {c.min_grad:.3e} "
                                       f"below {theta_grad:.1e}")
        lengths = np.linalg.norm(b - a, axis=1)
        for g in (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)):
            p = a + g * (b - a)
            if normal_field is None:
                n = grads[tris]
            else:
                n = normal_field.grad(p[:, 0], p[:, 1])
            n = n / np.linalg.norm(n, axis=1, keepdims=True)
            vv, _ = _point_eval(v, p, tris)
            flux = vv * np.einsum("id,id->i", phi.grad(p[:, 0], p[:, 1]), n)
            total += 0.5 * float(np.sum(flux * lengths))
    return total


def green_residual(y1: NodalField, y2: NodalField, t: float, v, phi, window=None,
                   theta_grad: float = THETA_GRAD, normal_fields=None) -> GreenResult:
    """Both sides of
    ``int (1_{S+} - 1_{S-}) grad v . grad phi
      = -int (1_{S+} - 1_{S-}) v lap phi - oint_{C1} v grad phi . n1 + oint_{C2} v grad phi . n2``
    with ``nj = grad yj / |grad yj|`` and ``Cj = {yj = t}``.

    Curves and regions always come from the P1 fields. By default the normals
    are the per-triangle P1 gradients, for which the identity holds on the
    discrete regions up to quadrature error. Passing analytic fields as
    ``normal_fields = (Y1, Y2)`` takes the normals from their gradients
    instead, so the residual measures the geometric discretisation error.

    Flux through the window boundary is not included; ``v`` should vanish
    there (or the regions should stay inside the window).
    """
    phi = ex.field(phi)
    v = _as_field(v)
    n1, n2 = (None, None) if normal_fields is None else tuple(ex.field(f) for f in normal_fields)
    regions = region_split(y1, y2, t, window)

    def grad_dot(pts, tri):
        _, gv = _point_eval(v, pts, tri)
        return np.einsum("...d,...d->...", gv, phi.grad(pts[:, 0], pts[:, 1]))

    def v_lap(pts, tri):
        vv, _ = _point_eval(v, pts, tri)
        return vv * phi.lap(pts[:, 0], pts[:, 1])

    lhs = regions.integrate(grad_dot)
    volume = -regions.integrate(v_lap)
    win = None if window is None else np.asarray(window, dtype=float)
    f1 = _curve_flux(extract_level_set(y1, t), v, phi, win, theta_grad, n1, "y1")
    f2 = _curve_flux(extract_level_set(y2, t), v, phi, win, theta_grad, n2, "y2")
    rhs = volume - f1 + f2
    return GreenResult(lhs, rhs, abs(lhs - rhs), y1.mesh.h_max, volume, (f1, f2))
