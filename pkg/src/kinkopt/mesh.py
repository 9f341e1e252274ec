"""Triangulation of convex polygons, P1 basis data, quadrature and sparse
assembly."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PolygonDomain:
    """Convex polygon, vertices in counterclockwise order."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        object.__setattr__(self, "vertices", v)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise MeshError("polygon needs at least 3 vertices in R^2")
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if np.any(cross < 0) or np.all(cross == 0):
            raise MeshError("polygon must be convex and counterclockwise")
        if self.area <= 0:
            raise MeshError("degenerate polygon")

    @property
    def area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def axis_rectangle(self):
        """``(x0, y0, x1, y1)`` if the polygon is an axis-aligned rectangle."""
        v = self.vertices
        if len(v) != 4:
            return None
        xs, ys = np.unique(v[:, 0]), np.unique(v[:, 1])
        if len(xs) != 2 or len(ys) != 2:
            return None
        return xs[0], ys[0], xs[1], ys[1]

    @classmethod
    def rectangle(cls, x0, y0, x1, y1):
        return cls(np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float))

    @classmethod
    def unit_square(cls):
        return cls.rectangle(0.0, 0.0, 1.0, 1.0)


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.ascontiguousarray(self.vertices, dtype=float))
        object.__setattr__(self, "triangles", np.ascontiguousarray(self.triangles, dtype=np.int64))
        if np.any(self.areas <= 0):
            raise MeshError("triangles must have positive signed area")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def corners(self) -> np.ndarray:
        """Vertex coordinates per triangle, shape (M, 3, 2)."""
        return self.vertices[self.triangles]

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """Gradients of the three local hat functions, shape (M, 3, 2)."""
        p = self.corners
        x, y = p[:, :, 0], p[:, :, 1]
        two_a = 2.0 * self.areas
        g = np.empty((self.n_triangles, 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            g[:, i, 0] = (y[:, j] - y[:, k]) / two_a
            g[:, i, 1] = (x[:, k] - x[:, j]) / two_a
        return g

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.corners.mean(axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        p = self.corners
        d = [np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1) for i in range(3)]
        return np.max(d, axis=0)

    @property
    def h_max(self) -> float:
        return float(self.diameters.max())

    @cached_property
    def _edge_data(self):
        t = self.triangles
        local = np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1)  # (M,3,2)
        key = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        return edges, inverse.reshape(-1, 3), counts

    @property
    def edges(self) -> np.ndarray:
        """Unique edges as sorted vertex pairs."""
        return self._edge_data[0]

    @property
    def triangle_edges(self) -> np.ndarray:
        """Edge index of local edge k = (v_k, v_{k+1}) per triangle."""
        return self._edge_data[1]

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        edges, _, counts = self._edge_data
        return edges[counts == 1]

    @cached_property
    def boundary(self) -> np.ndarray:
        flags = np.zeros(self.n_vertices, dtype=bool)
        flags[self.boundary_edges.ravel()] = True
        return flags

    @property
    def interior(self) -> np.ndarray:
        return ~self.boundary

    # quadrature ---------------------------------------------------------

    @cached_property
    def quad_points(self) -> np.ndarray:
        """Edge midpoints per triangle (M, 3, 2); degree-2 exact with weight |T|/3."""
        p = self.corners
        return 0.5 * (p + np.roll(p, -1, axis=1))

    @property
    def quad_weights(self) -> np.ndarray:
        return np.repeat(self.areas[:, None] / 3.0, 3, axis=1)

    def at_quad(self, values) -> np.ndarray:
        """P1 field at the edge-midpoint quadrature points, shape (M, 3)."""
        vt = np.asarray(values)[self.triangles]
        return 0.5 * (vt + np.roll(vt, -1, axis=1))

    def gradient(self, values) -> np.ndarray:
        """Per-triangle gradient of a P1 field, shape (M, 2)."""
        vt = np.asarray(values, dtype=float)[self.triangles]
        return np.einsum("mi,mid->md", vt, self.basis_gradients)

    def affine(self, values):
        """Per-triangle affine form ``c + g.x`` of a P1 field."""
        g = self.gradient(values)
        v0 = np.asarray(values, dtype=float)[self.triangles[:, 0]]
        c = v0 - np.einsum("md,md->m", g, self.corners[:, 0])
        return c, g

    def triangle_mean(self, values) -> np.ndarray:
        return np.asarray(values, dtype=float)[self.triangles].mean(axis=1)

    def to_json(self) -> dict:
        return {
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "boundary": np.flatnonzero(self.boundary).tolist(),
        }

    @classmethod
    def from_json(cls, data) -> "TriMesh":
        if isinstance(data, str):
            data = json.loads(data)
        return cls(np.array(data["vertices"], dtype=float), np.array(data["triangles"]))


# ----------------------------------------------------------------- builders

def _structured_rectangle(x0, y0, x1, y1, nx, ny) -> TriMesh:
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            # alternate the diagonal so neighbouring cells form a criss-cross pattern
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    return TriMesh(verts, np.array(tris))


def build_mesh(domain: PolygonDomain, target_h: float) -> TriMesh:
    """Triangulate ``domain``.

    Axis-aligned rectangles get a structured grid with cell side at most
    ``target_h`` (alternating diagonals); other convex polygons are fanned from
    their first vertex and red-refined until ``h_max <= target_h``.
    """
    if not target_h > 0:
        raise MeshError("target_h must be positive")
    rect = domain.axis_rectangle()
    if rect is not None:
        x0, y0, x1, y1 = rect
        nx = max(1, math.ceil((x1 - x0) / target_h - 1e-12))
        ny = max(1, math.ceil((y1 - y0) / target_h - 1e-12))
        return _structured_rectangle(x0, y0, x1, y1, nx, ny)
    v = domain.vertices
    tris = np.array([(0, i, i + 1) for i in range(1, len(v) - 1)])
    mesh = TriMesh(v.copy(), tris)
    while mesh.h_max > target_h:
        mesh = refine(mesh)
    return mesh


def unit_square_mesh(n: int) -> TriMesh:
    return _structured_rectangle(0.0, 0.0, 1.0, 1.0, n, n)


def refine(mesh: TriMesh) -> TriMesh:
    """Uniform red refinement: every triangle into four similar children."""
    edges = mesh.edges
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    nv = mesh.n_vertices
    verts = np.vstack([mesh.vertices, mids])
    te = mesh.triangle_edges + nv  # midpoint vertex of local edge k
    t = mesh.triangles
    v0, v1, v2 = t[:, 0], t[:, 1], t[:, 2]
    m01, m12, m20 = te[:, 0], te[:, 1], te[:, 2]
    children = np.stack([
        np.column_stack([v0, m01, m20]),
        np.column_stack([m01, v1, m12]),
        np.column_stack([m20, m12, v2]),
        np.column_stack([m01, m12, m20]),
    ], axis=1).reshape(-1, 3)
    return TriMesh(verts, children)


# ----------------------------------------------------------------- assembly

def _assemble(mesh: TriMesh, local: np.ndarray) -> sp.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_weighted_stiffness(mesh: TriMesh, coeff, require_positive: bool = False) -> sp.csr_matrix:
    """Entry (i, j) = sum_T coeff_T grad(phi_i).grad(phi_j) |T|."""
    coeff = np.broadcast_to(np.asarray(coeff, dtype=float), (mesh.n_triangles,))
    if not np.all(np.isfinite(coeff)):
        raise ValueError("stiffness coefficient must be finite")
    if require_positive and np.any(coeff <= 0):
        raise ValueError(f"nonpositive stiffness coefficient (min {coeff.min():.3e})")
    g = mesh.basis_gradients
    local = np.einsum("mid,mjd->mij", g, g) * (coeff * mesh.areas)[:, None, None]
    return _assemble(mesh, local)


def assemble_mass(mesh: TriMesh) -> sp.csr_matrix:
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = ref[None, :, :] * mesh.areas[:, None, None]
    return _assemble(mesh, local)


def lumped_mass(mesh: TriMesh) -> np.ndarray:
    """Row sums of the mass matrix, ``int phi_i dx``."""
    return np.bincount(mesh.triangles.ravel(), weights=np.repeat(mesh.areas / 3.0, 3),
                       minlength=mesh.n_vertices)


def assemble_lumped_mass(mesh: TriMesh) -> sp.csr_matrix:
    return sp.diags(lumped_mass(mesh)).tocsr()


def _drift_local(mesh: TriMesh, w, weights):
    w = np.asarray(w, dtype=float).reshape(mesh.n_triangles, 2)
    if weights is None:
        weights = np.repeat(mesh.areas[:, None] / 3.0, 3, axis=1)
    wg = np.einsum("md,mid->mi", w, mesh.basis_gradients)
    return wg[:, :, None] * np.asarray(weights, dtype=float)[:, None, :]


def assemble_drift(mesh: TriMesh, w, weights=None) -> sp.csr_matrix:
    """Entry (i, j) = sum_T (w_T . grad phi_i) c_{T,j}.

    ``c_{T,j}`` defaults to ``|T|/3``, which is ``int_T phi_j dx``; this is the
    weak form of ``int z (w . grad test) dx`` with trial index j.
    """
    return _assemble(mesh, _drift_local(mesh, w, weights))


def assemble_drift_transposed(mesh: TriMesh, w, weights=None) -> sp.csr_matrix:
    """Exact transpose of :func:`assemble_drift`."""
    return _assemble(mesh, np.transpose(_drift_local(mesh, w, weights), (0, 2, 1)))


def load_vector(mesh: TriMesh, f) -> np.ndarray:
    """``int f phi_i dx``; exact for P1 ``f`` (array), midpoint rule for callbacks."""
    if callable(f):
        q = mesh.quad_points
        vals = np.asarray(f(q[..., 0], q[..., 1]), dtype=float)
        vals = np.broadcast_to(vals, q.shape[:2])
        return quad_load(mesh, vals)
    return assemble_mass(mesh) @ np.asarray(f, dtype=float)


def quad_load(mesh: TriMesh, vals: np.ndarray) -> np.ndarray:
    """Load vector from integrand values at the edge-midpoint quadrature points."""
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite integrand")
    wv = vals * (mesh.areas / 3.0)[:, None]
    # midpoint k lies on edge (v_k, v_{k+1}); both hats equal 1/2 there
    contrib = 0.5 * (wv + np.roll(wv, 1, axis=1))
    return np.bincount(mesh.triangles.ravel(), weights=contrib.ravel(), minlength=mesh.n_vertices)


def integrate(mesh: TriMesh, f) -> float:
    """Integral over the mesh.

    Arrays of nodal values use the vertex rule (exact for P1); callbacks
    ``f(x1, x2)`` use the degree-2 edge-midpoint rule.
    """
    if hasattr(f, "values") and not callable(f):
        f = f.values
    if callable(f):
        q = mesh.quad_points
        vals = np.broadcast_to(np.asarray(f(q[..., 0], q[..., 1]), dtype=float), q.shape[:2])
        if not np.all(np.isfinite(vals)):
            raise ValueError("non-finite integrand")
        return float(np.sum(vals.sum(axis=1) * mesh.areas) / 3.0)
    vals = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite integrand")
    return float(np.sum(mesh.triangle_mean(vals) * mesh.areas))


# degree-5 Dunavant rule (barycentric coordinates, weights summing to 1)
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
_D5_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
_D5_W = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


def l2_error(mesh: TriMesh, values, exact) -> float:
    """``||u_h - u||_{L2}`` with a degree-5 rule; ``exact(x1, x2)`` vectorised."""
    pts = np.einsum("qi,mid->mqd", _D5_BARY, mesh.corners)
    uh = np.einsum("qi,mi->mq", _D5_BARY, np.asarray(values, dtype=float)[mesh.triangles])
    ue = np.asarray(exact(pts[..., 0], pts[..., 1]), dtype=float)
    err = (uh - ue) ** 2
    return float(np.sqrt(np.sum(err @ _D5_W * mesh.areas)))


def mesh_levels(domain: PolygonDomain, target_h: float, levels: int) -> list:
    """Base mesh followed by ``levels - 1`` red refinements."""
    meshes = [build_mesh(domain, target_h)]
    for _ in range(levels - 1):
        meshes.append(refine(meshes[-1]))
    return meshes


@dataclass(frozen=True, eq=False)
class NodalField:
    """P1 field: one value per mesh vertex."""

    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.mesh.n_vertices,):
            raise ValueError(f"expected {self.mesh.n_vertices} nodal values, got {v.shape}")
        object.__setattr__(self, "values", v)

    @classmethod
    def interpolate(cls, mesh: TriMesh, f) -> "NodalField":
        """Nodal interpolant of a vectorised callback ``f(x1, x2)`` or a constant."""
        if callable(f):
            vals = f(mesh.vertices[:, 0], mesh.vertices[:, 1])
        else:
            vals = f
        return cls(mesh, np.broadcast_to(np.asarray(vals, dtype=float), (mesh.n_vertices,)).copy())

    @classmethod
    def zeros(cls, mesh: TriMesh) -> "NodalField":
        return cls(mesh, np.zeros(mesh.n_vertices))

    def gradient(self) -> np.ndarray:
        return self.mesh.gradient(self.values)

    def at(self, points, triangles) -> np.ndarray:
        """Values at ``points`` known to lie in ``triangles``."""
        c, g = self.mesh.affine(self.values)
        points = np.asarray(points, dtype=float)
        return c[triangles] + np.einsum("...d,...d->...", g[triangles], points)

    def with_values(self, values) -> "NodalField":
        return NodalField(self.mesh, values)

    def __add__(self, other):
        return self.with_values(self.values + _vals(other))

    def __sub__(self, other):
        return self.with_values(self.values - _vals(other))

    def __mul__(self, scalar):
        return self.with_values(self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if len(self.values) else 0.0

    def to_json(self) -> list:
        return self.values.tolist()


def _vals(f):
    return f.values if isinstance(f, NodalField) else np.asarray(f, dtype=float)


def values_of(f) -> np.ndarray:
    return _vals(f)
