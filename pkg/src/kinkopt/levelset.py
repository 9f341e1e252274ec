"""Level sets of P1 fields: marching-triangles extraction into oriented
components, curve integrals, neighbourhood bands, component tracking, the
jump functional, and nearest-point projection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import PolylineDistance, clip_halfplane, polygon_area
from .mesh import NodalField

THETA_GRAD = 1e-8
_GAUSS2 = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


class NeighborhoodOverlapError(ValueError):
    def __init__(self, component, others, epsilon):
        self.component = component
        self.others = tuple(others)
        super().__init__(f"epsilon={epsilon:g} band of component {component} overlaps "
                         f"component(s) {list(self.others)}")


@dataclass(frozen=True, eq=False)
class LevelCurve:
    """Oriented polyline; segment i joins ``points[i]`` to ``points[i+1]`` inside
    triangle ``triangles[i]`` and the region ``{y > t}`` lies to its left."""

    points: np.ndarray
    triangles: np.ndarray
    closed: bool
    min_grad: float

    @property
    def starts(self):
        return self.points[:-1]

    @property
    def ends(self):
        return self.points[1:]

    @property
    def segment_lengths(self):
        return np.linalg.norm(self.ends - self.starts, axis=1)

    @property
    def length(self) -> float:
        return float(self.segment_lengths.sum())

    def signed_area(self) -> float:
        """Shoelace area of a closed curve (positive when counterclockwise)."""
        return polygon_area(self.points[:-1]) if self.closed else 0.0

    def sample_points(self) -> np.ndarray:
        """Vertices followed by segment midpoints."""
        return np.vstack([self.points, 0.5 * (self.starts + self.ends)])

    def to_json(self) -> dict:
        return {"closed": self.closed, "points": self.points.tolist(),
                "length": self.length, "min_grad": self.min_grad}


@dataclass(frozen=True, eq=False)
class LevelSetDecomposition:
    t: float
    components: list
    field: NodalField = field(repr=False)

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def __getitem__(self, i) -> LevelCurve:
        return self.components[i]

    @property
    def length(self) -> float:
        return sum(c.length for c in self.components)

    def all_segments(self):
        if not self.components:
            return np.empty((0, 2)), np.empty((0, 2)), np.empty(0, dtype=np.int64)
        return (np.vstack([c.starts for c in self.components]),
                np.vstack([c.ends for c in self.components]),
                np.concatenate([c.triangles for c in self.components]))

    def to_json(self) -> dict:
        return {"t": self.t, "components": [c.to_json() for c in self.components]}


def extract_level_set(y: NodalField, t: float) -> LevelSetDecomposition:
    """Marching triangles for ``{y = t}``.

    Vertices with ``y == t`` count as lying above the level (a symbolic
    perturbation), so every crossed triangle contributes exactly one segment
    and crossed interior edges are shared by exactly two segments.
    """
    mesh = y.mesh
    vals = y.values
    above = vals >= t
    tri = mesh.triangles
    s = above[tri]
    crossed = np.flatnonzero(s.any(axis=1) & ~s.all(axis=1))
    if len(crossed) == 0:
        return LevelSetDecomposition(float(t), [], y)

    te = mesh.triangle_edges
    edges = mesh.edges
    # crossing points on every edge whose endpoints differ in (perturbed) sign
    ea, eb = vals[edges[:, 0]], vals[edges[:, 1]]
    diff = eb - ea
    lam = np.divide(t - ea, diff, out=np.zeros_like(ea), where=diff != 0)
    lam = np.clip(lam, 0.0, 1.0)
    pts = (1 - lam)[:, None] * mesh.vertices[edges[:, 0]] + lam[:, None] * mesh.vertices[edges[:, 1]]

    sc = s[crossed]
    nxt = np.roll(sc, -1, axis=1)
    down = sc & ~nxt   # local edge k traversed above -> below: segment start
    up = ~sc & nxt     # below -> above: segment end
    start_edge = te[crossed, np.argmax(down, axis=1)]
    end_edge = te[crossed, np.argmax(up, axis=1)]

    by_start = {int(e): i for i, e in enumerate(start_edge)}
    successor = np.array([by_start.get(int(e), -1) for e in end_edge])
    has_pred = np.zeros(len(crossed), dtype=bool)
    has_pred[successor[successor >= 0]] = True

    grad_norm = np.linalg.norm(mesh.gradient(vals), axis=1)
    visited = np.zeros(len(crossed), dtype=bool)
    components = []

    def walk(first):
        chain = []
        i = first
        while i >= 0 and not visited[i]:
            visited[i] = True
            chain.append(i)
            i = successor[i]
        return chain, i == first

    # open chains start on boundary edges; the rest are closed loops
    for first in np.flatnonzero(~has_pred):
        chain, _ = walk(first)
        components.append((chain, False))
    for first in range(len(crossed)):
        if not visited[first]:
            chain, closed = walk(first)
            components.append((chain, closed))

    out = []
    for chain, closed in components:
        chain = np.array(chain)
        p = np.vstack([pts[start_edge[chain[0]]][None, :], pts[end_edge[chain]]])
        tris = crossed[chain]
        curve = LevelCurve(p, tris, bool(closed), float(grad_norm[tris].min()))
        if curve.length > 0:
            out.append(curve)
    return LevelSetDecomposition(float(t), out, y)


def curve_integral(curve: LevelCurve, f, per_triangle: bool = False) -> float:
    """Two-point Gauss rule on every segment.

    ``f(x1, x2)`` is vectorised; with ``per_triangle=True`` it is called as
    ``f(x1, x2, tri)`` with the triangle index of each point.
    """
    a, b = curve.starts, curve.ends
    lengths = curve.segment_lengths
    total = 0.0
    for g in _GAUSS2:
        p = a + g * (b - a)
        if per_triangle:
            vals = f(p[:, 0], p[:, 1], curve.triangles)
        else:
            vals = f(p[:, 0], p[:, 1])
        vals = np.broadcast_to(np.asarray(vals, dtype=float), lengths.shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("non-finite integrand on curve")
        total += 0.5 * float(np.sum(vals * lengths))
    return total


def _distance(curve: LevelCurve) -> PolylineDistance:
    return PolylineDistance(curve.starts, curve.ends)


def _curve_gap(c1: LevelCurve, c2: LevelCurve) -> float:
    """Minimum distance between two disjoint polylines (attained at a vertex)."""
    d1, _, _ = _distance(c2).query(c1.points)
    d2, _, _ = _distance(c1).query(c2.points)
    return float(min(d1.min(), d2.min()))


@dataclass(frozen=True, eq=False)
class NeighborhoodClass:
    epsilon: float
    inside_band: np.ndarray
    outside_band: np.ndarray
    distance: np.ndarray

    @property
    def band(self):
        return self.inside_band | self.outside_band


def classify_neighborhood(y: NodalField, decomposition: LevelSetDecomposition,
                          component_index: int, epsilon: float) -> NeighborhoodClass:
    """Triangles whose centroid lies within ``epsilon`` of a component.

    The inside band carries the sign of ``y - t`` in the enclosed region of a
    closed component (``{y > t}`` for counterclockwise curves); for open
    components it is the ``{y > t}`` side.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    curve = decomposition[component_index]
    colliding = [k for k, other in enumerate(decomposition)
                 if k != component_index and _curve_gap(curve, other) < 2 * epsilon]
    if colliding:
        raise NeighborhoodOverlapError(component_index, colliding, epsilon)
    mesh = y.mesh
    cen = mesh.centroids
    dist, _, _ = _distance(curve).query(cen, cutoff=epsilon)
    near = dist < epsilon
    sign = np.sign(y.at(cen, np.arange(mesh.n_triangles)) - decomposition.t)
    inner_sign = -1.0 if (curve.closed and curve.signed_area() < 0) else 1.0
    inside = near & (sign == inner_sign)
    outside = near & (sign == -inner_sign)
    return NeighborhoodClass(float(epsilon), inside, outside, dist)


def hausdorff(c1, c2) -> float:
    """Symmetric Hausdorff distance between polylines (or lists of them),
    sampled on vertices and segment midpoints."""
    c1 = c1 if isinstance(c1, (list, tuple)) else [c1]
    c2 = c2 if isinstance(c2, (list, tuple)) else [c2]
    if not c1 or not c2:
        return float("inf")

    def one_sided(src, dst):
        a = np.vstack([c.starts for c in dst])
        b = np.vstack([c.ends for c in dst])
        d, _, _ = PolylineDistance(a, b).query(np.vstack([c.sample_points() for c in src]))
        return float(d.max())

    return max(one_sided(c1, c2), one_sided(c2, c1))


@dataclass
class TrackingReport:
    count_in_band: int
    hausdorff: float
    components: list = field(default_factory=list, repr=False)


def component_tracking(y: NodalField, y_n: NodalField, t: float, epsilon: float,
                       component_index: int = 0, theta_grad: float = THETA_GRAD) -> TrackingReport:
    """Components of ``{y_n = t}`` meeting the ``epsilon``-neighbourhood of a
    component of ``{y = t}``, and their Hausdorff distance to it."""
    base = extract_level_set(y, t)
    curve = base[component_index]
    if curve.min_grad < theta_grad:
        raise ValueError(f"component {component_index} has vanishing gradient "
                         f"(min |grad y| = {curve.min_grad:.3e})")
    probe = _distance(curve)
    found = []
    for comp in extract_level_set(y_n, t):
        d, _, _ = probe.query(comp.sample_points(), cutoff=epsilon)
        if np.any(d < epsilon):
            found.append(comp)
    h = hausdorff(curve, found) if found else float("inf")
    return TrackingReport(len(found), h, found)


def _affine_pieces_band(c, g, lo, hi, poly):
    poly = clip_halfplane(poly, c, g, "ge", lo)
    return clip_halfplane(poly, c, g, "le", hi)


@dataclass
class JumpResult:
    r_list: list
    estimates: list
    extrapolated: float


def jump_functional(y: NodalField, t_bar: float, sigma0: float, r_list) -> JumpResult:
    """``sigma0 / r * int_{0 < |y - t_bar| <= r} (|d1 y| + |d2 y|) dx`` for each r,
    with exact per-triangle band areas, plus a Richardson extrapolation
    (linear in r) from the last two values."""
    r_list = [float(r) for r in r_list]
    if any(r <= 0 for r in r_list) or any(a <= b for a, b in zip(r_list, r_list[1:])):
        raise ValueError("r_list must be positive and strictly decreasing")
    mesh = y.mesh
    c, g = mesh.affine(y.values)
    weight = np.abs(g).sum(axis=1)
    vt = y.values[mesh.triangles]
    vmin, vmax = vt.min(axis=1), vt.max(axis=1)
    estimates = []
    for r in r_list:
        lo, hi = t_bar - r, t_bar + r
        cand = np.flatnonzero((vmax >= lo) & (vmin <= hi) & (weight > 0))
        inside = (vmin[cand] >= lo) & (vmax[cand] <= hi)
        total = float(np.sum(mesh.areas[cand[inside]] * weight[cand[inside]]))
        for m in cand[~inside]:
            piece = _affine_pieces_band(c[m], g[m], lo, hi, mesh.corners[m])
            total += abs(polygon_area(piece)) * weight[m]
        estimates.append(sigma0 * total / r)
    if len(estimates) >= 2:
        r1, r2 = r_list[-2], r_list[-1]
        e1, e2 = estimates[-2], estimates[-1]
        extrap = (r1 * e2 - r2 * e1) / (r1 - r2)
    else:
        extrap = estimates[-1]
    return JumpResult(r_list, estimates, float(extrap))


@dataclass
class Projection:
    foot: np.ndarray
    collinearity_residual: float
    segment: int


def project_to_curve(p, curve: LevelCurve, y: NodalField) -> Projection:
    """Nearest point on the polyline and ``|sin|`` of the angle between
    ``p - foot`` and the gradient of ``y`` in the foot's triangle."""
    p = np.asarray(p, dtype=float)
    d, seg, foot = _distance(curve).query(p[None, :])
    foot = foot[0]
    off = p - foot
    if d[0] == 0 or np.linalg.norm(off) == 0:
        return Projection(foot, 0.0, int(seg[0]))
    grad = y.gradient()[curve.triangles[seg[0]]]
    gn = np.linalg.norm(grad)
    if gn == 0:
        return Projection(foot, 1.0, int(seg[0]))
    cross = abs(off[0] * grad[1] - off[1] * grad[0])
    return Projection(foot, float(cross / (np.linalg.norm(off) * gn)), int(seg[0]))
