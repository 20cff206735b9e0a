"""Planar triangulation and piecewise-linear finite element matrices.

The SPDE precision is discretised on a triangulation of the observation
locations (optionally padded by a rectangular ring of vertices).  This
module owns the mesh, the lumped mass / stiffness assembly, and the
barycentric projector from mesh vertices to arbitrary points.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Delaunay, cKDTree

from .errors import (
    AllCollinear,
    DegenerateTriangle,
    DimensionMismatch,
    DuplicatePoints,
    PointOutsideMesh,
)

DUPLICATE_TOL = 1e-12
MIN_AREA = 1e-14
LOCATE_TOL = 1e-12


def as_points(points):
    """Validate and return an ``(n, 2)`` float array of planar coordinates."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DimensionMismatch(f"expected an (n, 2) array of coordinates, got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("coordinates must be finite")
    return pts


def check_distinct(pts, tol=DUPLICATE_TOL):
    pairs = cKDTree(pts).query_pairs(tol, output_type="ndarray")
    if len(pairs):
        i, j = pairs[0]
        raise DuplicatePoints(f"points {i} and {j} coincide (tolerance {tol:g})")


def check_spans_area(pts):
    centred = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] <= 1e-12 * sv[0]:
        raise AllCollinear("points span no area")


@dataclass(frozen=True)
class Mesh:
    """A conforming triangulation with counter-clockwise triangles.

    The first ``n_data`` vertices are the input points in their original
    order; any padding vertices follow.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    n_data: int

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def areas(self):
        return signed_areas(self.vertices, self.triangles)

    @property
    def data_index(self):
        return np.arange(self.n_data)


@dataclass(frozen=True)
class FemMatrices:
    """Lumped mass ``C`` (stored as its diagonal), stiffness ``G1`` and ``G2``."""

    c_diag: np.ndarray
    G1: sp.csc_matrix
    G2: sp.csc_matrix

    @property
    def n(self):
        return len(self.c_diag)

    @property
    def C(self):
        return sp.diags(self.c_diag, format="csc")


def signed_areas(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


def padding_ring(pts, extension, per_side=8):
    """Vertices on a rectangle around the bounding box, ``per_side`` per edge."""
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    pad = extension * np.hypot(*(hi - lo))
    lo = lo - pad
    hi = hi + pad
    t = np.arange(per_side) / per_side
    bottom = np.column_stack([lo[0] + t * (hi[0] - lo[0]), np.full(per_side, lo[1])])
    right = np.column_stack([np.full(per_side, hi[0]), lo[1] + t * (hi[1] - lo[1])])
    top = np.column_stack([hi[0] - t * (hi[0] - lo[0]), np.full(per_side, hi[1])])
    left = np.column_stack([np.full(per_side, lo[0]), hi[1] - t * (hi[1] - lo[1])])
    return np.vstack([bottom, right, top, left])


def _orient(vertices, triangles):
    area = signed_areas(vertices, triangles)
    flip = area < 0
    triangles = triangles.copy()
    triangles[flip, 1], triangles[flip, 2] = triangles[flip, 2], triangles[flip, 1].copy()
    return triangles


def _hull_flags(n_vertices, hull_edges):
    flags = np.zeros(n_vertices, dtype=bool)
    flags[np.unique(hull_edges)] = True
    return flags


def triangulate(points, extension=0.2, per_side=8):
    """Delaunay triangulation of ``points`` plus an optional padding ring.

    Parameters
    ----------
    points : array_like, shape (n, 2)
    extension : float
        Padding distance as a fraction of the bounding-box diagonal.  Zero
        disables the ring.
    per_side : int
        Ring vertices per rectangle edge.
    """
    pts = as_points(points)
    if len(pts) < 3:
        raise AllCollinear("need at least three points")
    check_distinct(pts)
    check_spans_area(pts)
    if extension < 0:
        raise ValueError("extension must be non-negative")

    allpts = pts if extension == 0 else np.vstack([pts, padding_ring(pts, extension, per_side)])
    if extension > 0:
        check_distinct(allpts)
    tri = Delaunay(allpts)
    triangles = _orient(allpts, tri.simplices.astype(np.int64))
    keep = np.abs(signed_areas(allpts, triangles)) >= MIN_AREA
    triangles = triangles[keep]
    # Sort for a deterministic triangle numbering independent of Qhull internals.
    triangles = triangles[np.lexsort(triangles.T[::-1])]
    return Mesh(
        vertices=allpts,
        triangles=triangles,
        boundary=_hull_flags(len(allpts), tri.convex_hull),
        n_data=len(pts),
    )


def grid_mesh(nx, ny, bounds=(0.0, 1.0, 0.0, 1.0)):
    """Structured mesh of an ``nx`` by ``ny`` vertex grid, two triangles per cell.

    Diagonals alternate between cells so that the mesh has no preferred
    direction at the scale of two cells.
    """
    x0, x1, y0, y1 = bounds
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([gx.ravel(), gy.ravel()])
    tris = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b = a + 1
            c = a + nx
            d = c + 1
            if (i + j) % 2 == 0:
                tris.append((a, b, d))
                tris.append((a, d, c))
            else:
                tris.append((a, b, c))
                tris.append((b, d, c))
    triangles = np.array(tris, dtype=np.int64)
    iy, ix = np.divmod(np.arange(nx * ny), nx)
    boundary = (ix == 0) | (ix == nx - 1) | (iy == 0) | (iy == ny - 1)
    return Mesh(vertices=vertices, triangles=triangles, boundary=boundary, n_data=0)


def assemble_fem(mesh):
    """Assemble lumped mass, stiffness ``G1`` and ``G2 = G1 C^-1 G1``."""
    v = mesh.vertices
    t = mesh.triangles
    area = signed_areas(v, t)
    if np.any(area < MIN_AREA):
        bad = int(np.argmin(area))
        raise DegenerateTriangle(f"triangle {bad} has area {area[bad]:.3e}")
    n = mesh.n_vertices

    c_diag = np.bincount(t.ravel(), weights=np.repeat(area / 3.0, 3), minlength=n)

    # Hat-function gradients: grad psi_i = (y_j - y_k, x_k - x_j) / (2A), cyclic (i, j, k).
    x = v[t, 0]
    y = v[t, 1]
    b = np.column_stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]])
    c = np.column_stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]])
    local = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) / (4.0 * area)[:, None, None]
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    G1 = sp.csc_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    G1 = ((G1 + G1.T) * 0.5).tocsc()
    G1.sum_duplicates()

    Cinv = sp.diags(1.0 / c_diag)
    G2 = (G1 @ Cinv @ G1).tocsc()
    G2 = ((G2 + G2.T) * 0.5).tocsc()
    return FemMatrices(c_diag=c_diag, G1=G1, G2=G2)


def barycentric(vertices, triangles, points):
    """Barycentric coordinates of every point in every triangle, shape (m, T, 3)."""
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    det = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
    dx = points[:, None, 0] - p0[None, :, 0]
    dy = points[:, None, 1] - p0[None, :, 1]
    l1 = (dx * (p2[:, 1] - p0[:, 1]) - dy * (p2[:, 0] - p0[:, 0])) / det
    l2 = (dy * (p1[:, 0] - p0[:, 0]) - dx * (p1[:, 1] - p0[:, 1])) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


def locate(mesh, points, chunk=512):
    """Containing triangle and barycentric weights for each point.

    Points on shared edges go to the lowest-index triangle.
    """
    pts = as_points(points)
    m = len(pts)
    tri_index = np.empty(m, dtype=np.int64)
    weights = np.empty((m, 3))
    scale = max(1.0, float(np.abs(mesh.vertices).max()))
    tol = LOCATE_TOL * scale
    for start in range(0, m, chunk):
        block = pts[start:start + chunk]
        lam = barycentric(mesh.vertices, mesh.triangles, block)
        inside = np.all(lam >= -tol, axis=-1)
        found = inside.any(axis=1)
        if not found.all():
            raise PointOutsideMesh(start + int(np.argmin(found)))
        first = np.argmax(inside, axis=1)
        w = lam[np.arange(len(block)), first]
        w = np.clip(w, 0.0, 1.0)
        w /= w.sum(axis=1, keepdims=True)
        tri_index[start:start + chunk] = first
        weights[start:start + chunk] = w
    return tri_index, weights


def projector(mesh, targets):
    """Sparse ``(m, n_vertices)`` matrix of barycentric interpolation weights."""
    tri_index, weights = locate(mesh, targets)
    m = len(tri_index)
    cols = mesh.triangles[tri_index]
    A = sp.csr_matrix(
        (weights.ravel(), (np.repeat(np.arange(m), 3), cols.ravel())),
        shape=(m, mesh.n_vertices),
    )
    A.eliminate_zeros()
    return A


def write_mesh(mesh, path):
    """Write ``v s1 s2 flag`` and ``t i j k`` lines (0-based indices)."""
    lines = [f"# n_data {mesh.n_data}"]
    for (x, y), flag in zip(mesh.vertices, mesh.boundary):
        lines.append(f"v {float(x)!r} {float(y)!r} {int(flag)}")
    for i, j, k in mesh.triangles:
        lines.append(f"t {i} {j} {k}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_mesh(path):
    verts, flags, tris = [], [], []
    n_data = None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "#":
            if len(parts) == 3 and parts[1] == "n_data":
                n_data = int(parts[2])
        elif parts[0] == "v":
            verts.append((float(parts[1]), float(parts[2])))
            flags.append(bool(int(parts[3])))
        elif parts[0] == "t":
            tris.append(tuple(int(p) for p in parts[1:4]))
        else:
            raise ValueError(f"unrecognised mesh line: {line!r}")
    return Mesh(
        vertices=np.array(verts, dtype=float).reshape(-1, 2),
        triangles=np.array(tris, dtype=np.int64).reshape(-1, 3),
        boundary=np.array(flags, dtype=bool),
        n_data=len(verts) if n_data is None else n_data,
    )
