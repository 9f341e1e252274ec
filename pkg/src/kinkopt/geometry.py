"""Small planar geometry kernels: half-plane clipping of convex polygons,
polygon quadrature, and point-to-polyline distances."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

VERTEX_TOL = 1e-12


def clip_halfplane(poly: np.ndarray, c: float, g: np.ndarray, keep: str = "ge",
                   level: float = 0.0) -> np.ndarray:
    """Clip a convex polygon to ``{c + g.x >= level}`` (``keep="ge"``) or
    ``{c + g.x <= level}`` (``keep="le"``)."""
    if len(poly) == 0:
        return poly
    f = c + poly @ g - level
    if keep == "le":
        f = -f
    scale = max(1.0, float(np.max(np.abs(f))))
    f = np.where(np.abs(f) <= VERTEX_TOL * scale, 0.0, f)
    if np.all(f >= 0):
        return poly
    if np.all(f <= 0):
        return poly[:0]
    out = []
    n = len(poly)
    for i in range(n):
        j = (i + 1) % n
        fi, fj = f[i], f[j]
        if fi >= 0:
            out.append(poly[i])
        if (fi > 0 and fj < 0) or (fi < 0 and fj > 0):
            lam = fi / (fi - fj)
            out.append(poly[i] + lam * (poly[j] - poly[i]))
    if len(out) < 3:
        return poly[:0]
    return np.array(out)


def clip_convex(poly: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Clip to a convex counterclockwise window polygon."""
    w = np.asarray(window, dtype=float)
    for i in range(len(w)):
        a, b = w[i], w[(i + 1) % len(w)]
        e = b - a
        normal = np.array([-e[1], e[0]])  # inward for ccw windows
        poly = clip_halfplane(poly, -float(normal @ a), normal)
        if len(poly) == 0:
            break
    return poly


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def fan_quadrature(poly: np.ndarray):
    """Edge-midpoint rule on a fan triangulation: ``(points (K, 2), weights (K,))``.

    Exact for quadratics on convex polygons.
    """
    if len(poly) < 3:
        return np.empty((0, 2)), np.empty(0)
    p0 = poly[0]
    a = poly[1:-1]
    b = poly[2:]
    d1, d2 = a - p0, b - p0
    area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    pts = np.concatenate([0.5 * (p0 + a), 0.5 * (a + b), 0.5 * (b + p0)])
    w = np.tile(area / 3.0, 3)
    return pts, w


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Distance from points ``p`` to segments ``[a, b]`` (broadcast) and the
    feet of the perpendiculars."""
    d = b - a
    dd = np.einsum("...d,...d->...", d, d)
    safe = np.where(dd > 0, dd, 1.0)
    lam = np.clip(np.einsum("...d,...d->...", p - a, d) / safe, 0.0, 1.0)
    lam = np.where(dd > 0, lam, 0.0)
    foot = a + lam[..., None] * d
    return np.linalg.norm(p - foot, axis=-1), foot


class PolylineDistance:
    """Exact distances from query points to a set of segments, using a KD tree
    on segment midpoints to prune candidates."""

    def __init__(self, starts: np.ndarray, ends: np.ndarray):
        self.a = np.asarray(starts, dtype=float).reshape(-1, 2)
        self.b = np.asarray(ends, dtype=float).reshape(-1, 2)
        self.mid = 0.5 * (self.a + self.b)
        self.half = 0.5 * np.linalg.norm(self.b - self.a, axis=1)
        self.max_half = float(self.half.max()) if len(self.half) else 0.0
        self.tree = cKDTree(self.mid) if len(self.mid) else None

    def query(self, points: np.ndarray, cutoff: float = np.inf):
        """Distances (``inf`` beyond ``cutoff``), index of the nearest segment, feet."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        n = len(points)
        dist = np.full(n, np.inf)
        seg = np.full(n, -1, dtype=np.int64)
        foot = np.full((n, 2), np.nan)
        if self.tree is None or n == 0:
            return dist, seg, foot
        if np.isfinite(cutoff):
            lists = self.tree.query_ball_point(points, cutoff + self.max_half)
        else:
            # the nearest midpoint bounds the distance; search within that bound
            d0, _ = self.tree.query(points)
            lists = self.tree.query_ball_point(points, d0 + self.max_half + 1e-12)
        counts = np.array([len(li) for li in lists])
        if counts.sum() == 0:
            return dist, seg, foot
        qi = np.repeat(np.arange(n), counts)
        si = np.fromiter((s for li in lists for s in li), dtype=np.int64, count=int(counts.sum()))
        d, f = point_segment_distance(points[qi], self.a[si], self.b[si])
        order = np.lexsort((si, d, qi))
        qi, si, d, f = qi[order], si[order], d[order], f[order]
        first = np.ones(len(qi), dtype=bool)
        first[1:] = qi[1:] != qi[:-1]
        q = qi[first]
        dist[q] = d[first]
        seg[q] = si[first]
        foot[q] = f[first]
        if np.isfinite(cutoff):
            far = dist >= cutoff
            dist[far] = np.inf
        return dist, seg, foot
