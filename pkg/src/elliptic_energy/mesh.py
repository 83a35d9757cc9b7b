"""Conforming 2D triangulations with a Dirichlet/Neumann boundary split.

Meshes are structured right-triangle meshes on rectangles and L-shapes;
the boundary is partitioned edge-by-edge into a Dirichlet part and its
Neumann complement, and the nodes where the tag changes along the
boundary loop (the contact-interface corners) are tracked explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DIRICHLET = "D"
NEUMANN = "N"

# Leaf depth for ball-clipping quadrature; accuracy ~1e-3 relative.
_CLIP_DEPTH = 6


class MeshError(ValueError):
    """Invalid geometry or mesh-construction input."""


@dataclass(frozen=True)
class Mesh:
    """Immutable conforming triangulation of a polygonal domain.

    nodes          : (n, 2) coordinates
    triangles      : (m, 3) node indices, counterclockwise
    boundary_edges : (b, 2) node index pairs covering the boundary once
    edge_tags      : (b,) array of 'D' / 'N'
    corner_nodes   : node indices where the tag changes along the loop
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    corner_nodes: np.ndarray

    def __post_init__(self) -> None:
        for arr in (self.nodes, self.triangles, self.boundary_edges,
                    self.edge_tags, self.corner_nodes):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def areas(self) -> np.ndarray:
        """Signed triangle areas (positive for CCW orientation)."""
        p = self.nodes[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    def gradients(self) -> np.ndarray:
        """(m, 3, 2) constant gradients of the 3 nodal hat functions."""
        p = self.nodes[self.triangles]
        area2 = 2.0 * self.areas()[:, None]
        g = np.empty((self.n_triangles, 3, 2))
        for k in range(3):
            a, b = p[:, (k + 1) % 3], p[:, (k + 2) % 3]
            g[:, k, 0] = (a[:, 1] - b[:, 1]) / area2[:, 0]
            g[:, k, 1] = (b[:, 0] - a[:, 0]) / area2[:, 0]
        return g

    def diameter(self) -> float:
        lo, hi = self.nodes.min(axis=0), self.nodes.max(axis=0)
        return float(np.hypot(*(hi - lo)))

    def dirichlet_nodes(self) -> np.ndarray:
        """Sorted indices of nodes lying on a Dirichlet-tagged edge."""
        mask = self.edge_tags == DIRICHLET
        return np.unique(self.boundary_edges[mask])

    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_edges)


@dataclass(frozen=True)
class BallQuery:
    """A family of balls around one center, radii strictly decreasing."""

    center: tuple[float, float]
    radii: tuple[float, ...]

    def __post_init__(self) -> None:
        r = np.asarray(self.radii, dtype=float)
        if r.size == 0 or np.any(r <= 0.0):
            raise MeshError("ball radii must be positive")
        if np.any(np.diff(r) >= 0.0):
            raise MeshError("ball radii must be strictly decreasing")


def dyadic_radii(mesh: Mesh, levels: int = 6) -> tuple[float, ...]:
    """Default radius ladder r_k = diam/4 * 2^-k, k = 0..levels."""
    r0 = mesh.diameter() / 4.0
    return tuple(r0 * 0.5 ** k for k in range(levels + 1))


def _structured_block(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Right-triangle mesh on the tensor grid (x, y); diagonal SW-NE."""
    nx, ny = len(x) - 1, len(y) - 1
    xx, yy = np.meshgrid(x, y, indexing="xy")
    nodes = np.column_stack([xx.ravel(), yy.ravel()])
    tris = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b = a + 1
            c = b + (nx + 1)
            d = a + (nx + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    return nodes, np.asarray(tris, dtype=np.int64)


def _boundary_loop(triangles: np.ndarray) -> np.ndarray:
    """Edges appearing in exactly one triangle, oriented as in that triangle."""
    edges = {}
    for t in triangles:
        for k in range(3):
            e = (int(t[k]), int(t[(k + 1) % 3]))
            key = (min(e), max(e))
            if key in edges:
                del edges[key]
            else:
                edges[key] = e
    return np.asarray(sorted(edges.values()), dtype=np.int64)


def _finish(nodes: np.ndarray, triangles: np.ndarray,
            tags: np.ndarray | None = None) -> Mesh:
    bedges = _boundary_loop(triangles)
    if tags is None:
        tags = np.full(bedges.shape[0], NEUMANN, dtype=object)
    corners = _corner_nodes(bedges, np.asarray(tags, dtype=object))
    return Mesh(np.ascontiguousarray(nodes, dtype=float), triangles,
                bedges, np.asarray(tags, dtype=object), corners)


def _corner_nodes(bedges: np.ndarray, tags: np.ndarray) -> np.ndarray:
    """Boundary nodes incident to edges of both tags."""
    seen: dict[int, set[str]] = {}
    for (a, b), tag in zip(bedges, tags):
        seen.setdefault(int(a), set()).add(str(tag))
        seen.setdefault(int(b), set()).add(str(tag))
    corners = [n for n, s in seen.items() if len(s) > 1]
    return np.asarray(sorted(corners), dtype=np.int64)


def build_rectangle(nx: int, ny: int, extent: tuple[float, float] = (1.0, 1.0)) -> Mesh:
    """Structured right-triangle mesh on (0, width) x (0, height).

    (nx+1)(ny+1) nodes and 2*nx*ny triangles, all right triangles, so the
    mesh is non-obtuse and the discrete maximum principle applies.  All
    boundary edges start out Neumann; use tag_boundary to set contacts.
    """
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be >= 1")
    width, height = extent
    if width <= 0.0 or height <= 0.0:
        raise MeshError(f"extent must be positive, got {extent}")
    nodes, tris = _structured_block(np.linspace(0.0, width, nx + 1),
                                    np.linspace(0.0, height, ny + 1))
    return _finish(nodes, tris)


def build_lshape(n: int) -> Mesh:
    """L-shaped domain (0,2)^2 minus [1,2)^2, 3 unit squares n x n each.

    The reentrant corner sits at (1, 1); 6*n^2 triangles, area 3.
    """
    if n < 1:
        raise MeshError("n must be >= 1")
    h = 1.0 / n
    coords = {}
    nodes = []

    def nid(i: int, j: int) -> int:
        key = (i, j)
        if key not in coords:
            coords[key] = len(nodes)
            nodes.append((i * h, j * h))
        return coords[key]

    tris = []
    for j in range(2 * n):
        for i in range(2 * n):
            if i >= n and j >= n:
                continue  # the removed quadrant
            a = nid(i, j)
            b = nid(i + 1, j)
            c = nid(i + 1, j + 1)
            d = nid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    return _finish(np.asarray(nodes, dtype=float), np.asarray(tris, dtype=np.int64))


def reentrant_corner(mesh: Mesh) -> int:
    """Node index at (1, 1) of an L-shape mesh."""
    d = np.hypot(mesh.nodes[:, 0] - 1.0, mesh.nodes[:, 1] - 1.0)
    idx = int(np.argmin(d))
    if d[idx] > 1e-12:
        raise MeshError("mesh has no node at the reentrant corner (1, 1)")
    return idx


def tag_boundary(mesh: Mesh, predicate: Callable[[float, float], str]) -> Mesh:
    """Retag every boundary edge from its midpoint; recompute corners."""
    mids = 0.5 * (mesh.nodes[mesh.boundary_edges[:, 0]]
                  + mesh.nodes[mesh.boundary_edges[:, 1]])
    tags = np.asarray([predicate(float(x), float(y)) for x, y in mids], dtype=object)
    bad = [t for t in tags if t not in (DIRICHLET, NEUMANN)]
    if bad:
        raise MeshError(f"predicate returned invalid tag {bad[0]!r}")
    corners = _corner_nodes(mesh.boundary_edges, tags)
    return Mesh(mesh.nodes, mesh.triangles, mesh.boundary_edges, tags, corners)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split each triangle into 4 via edge midpoints; tags inherit."""
    nodes = list(map(tuple, mesh.nodes))
    midpoint: dict[tuple[int, int], int] = {}

    def mid(a: int, b: int) -> int:
        key = (min(a, b), max(a, b))
        if key not in midpoint:
            midpoint[key] = len(nodes)
            nodes.append(tuple(0.5 * (mesh.nodes[a] + mesh.nodes[b])))
        return midpoint[key]

    tris = []
    for a, b, c in mesh.triangles:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        tris.extend([(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)])

    # child boundary edges inherit the parent edge tag
    tag_of = {}
    for (a, b), tag in zip(mesh.boundary_edges, mesh.edge_tags):
        m = midpoint[(min(int(a), int(b)), max(int(a), int(b)))]
        tag_of[(min(int(a), m), max(int(a), m))] = tag
        tag_of[(min(int(b), m), max(int(b), m))] = tag

    fine = np.asarray(tris, dtype=np.int64)
    bedges = _boundary_loop(fine)
    tags = np.asarray([tag_of[(min(int(a), int(b)), max(int(a), int(b)))]
                       for a, b in bedges], dtype=object)
    corners = _corner_nodes(bedges, tags)
    return Mesh(np.asarray(nodes, dtype=float), fine, bedges, tags, corners)


# ---------------------------------------------------------------------------
# Ball clipping


def _point_triangle_distance(p: np.ndarray, tri: np.ndarray) -> float:
    """Euclidean distance from p to a (3, 2) triangle (0 if inside)."""
    d = tri - p
    cross = [d[k, 0] * d[(k + 1) % 3, 1] - d[k, 1] * d[(k + 1) % 3, 0]
             for k in range(3)]
    if all(c >= 0.0 for c in cross) or all(c <= 0.0 for c in cross):
        return 0.0
    best = np.inf
    for k in range(3):
        a, b = tri[k], tri[(k + 1) % 3]
        ab = b - a
        t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
        best = min(best, float(np.hypot(*(a + t * ab - p))))
    return best


def _clip_area(tri: np.ndarray, center: np.ndarray, r2: float, depth: int) -> float:
    """Area of tri intersected with the disk, by recursive 4-splitting."""
    inside = np.sum((tri - center) ** 2, axis=1) <= r2
    area = abs((tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1])
               - (tri[2, 0] - tri[0, 0]) * (tri[1, 1] - tri[0, 1])) / 2.0
    if inside.all():
        return area
    if not inside.any():
        if _point_triangle_distance(center, tri) ** 2 >= r2:
            return 0.0
    if depth == 0:
        # low-order cubature of the indicator: vertices 1/6 each, centroid 1/2
        cen = tri.mean(axis=0)
        frac = inside.sum() / 6.0
        if np.sum((cen - center) ** 2) <= r2:
            frac += 0.5
        return area * frac
    m01 = 0.5 * (tri[0] + tri[1])
    m12 = 0.5 * (tri[1] + tri[2])
    m20 = 0.5 * (tri[2] + tri[0])
    return (_clip_area(np.array([tri[0], m01, m20]), center, r2, depth - 1)
            + _clip_area(np.array([m01, tri[1], m12]), center, r2, depth - 1)
            + _clip_area(np.array([m20, m12, tri[2]]), center, r2, depth - 1)
            + _clip_area(np.array([m01, m12, m20]), center, r2, depth - 1))


def _point_in_domain(mesh: Mesh, p: np.ndarray, tol: float = 1e-9) -> bool:
    pts = mesh.nodes[mesh.triangles]
    scale = mesh.diameter()
    for tri in pts:
        if _point_triangle_distance(p, tri) <= tol * scale:
            return True
    return False


def ball_restriction(mesh: Mesh, q: BallQuery) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-radius (element indices, clipped-area weights) for B_r(center).

    Weights approximate |T ∩ B_r| by recursive midpoint subdivision;
    elements with zero clipped area are dropped.
    """
    center = np.asarray(q.center, dtype=float)
    if not _point_in_domain(mesh, center):
        raise MeshError(f"ball center {q.center} lies outside the domain")
    pts = mesh.nodes[mesh.triangles]
    areas = np.abs(mesh.areas())
    dists = np.array([_point_triangle_distance(center, tri) for tri in pts])
    # circumradius bound: farthest vertex distance per triangle
    far = np.sqrt(np.max(np.sum((pts - center) ** 2, axis=2), axis=1))
    out = []
    for r in q.radii:
        r2 = r * r
        weights = np.zeros(mesh.n_triangles)
        cand = np.nonzero(dists < r)[0]
        for e in cand:
            if far[e] <= r:
                weights[e] = areas[e]
            else:
                weights[e] = _clip_area(pts[e], center, r2, _CLIP_DEPTH)
        keep = np.nonzero(weights > 0.0)[0]
        out.append((keep, weights[keep]))
    return out


def boundary_edge_elements(mesh: Mesh) -> np.ndarray:
    """Index of the unique triangle adjacent to each boundary edge."""
    owner = {}
    for e, t in enumerate(mesh.triangles):
        for k in range(3):
            key = (min(int(t[k]), int(t[(k + 1) % 3])),
                   max(int(t[k]), int(t[(k + 1) % 3])))
            owner.setdefault(key, []).append(e)
    out = np.empty(mesh.boundary_edges.shape[0], dtype=np.int64)
    for i, (a, b) in enumerate(mesh.boundary_edges):
        out[i] = owner[(min(int(a), int(b)), max(int(a), int(b)))][0]
    return out


def boundary_normals(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Outward unit normals and lengths of the boundary edges.

    Boundary edges are oriented counterclockwise around the domain, so
    the outward normal of (a, b) is the right-rotation of b - a.
    """
    a = mesh.nodes[mesh.boundary_edges[:, 0]]
    b = mesh.nodes[mesh.boundary_edges[:, 1]]
    t = b - a
    lengths = np.hypot(t[:, 0], t[:, 1])
    normals = np.column_stack([t[:, 1], -t[:, 0]]) / lengths[:, None]
    return normals, lengths


# ---------------------------------------------------------------------------
# Text format: "<N> nodes <T> triangles <B> edges" header, then v/t/e lines.


def write_mesh(mesh: Mesh, path: str) -> None:
    lines = [f"{mesh.n_nodes} nodes {mesh.n_triangles} triangles "
             f"{mesh.boundary_edges.shape[0]} edges"]
    for i, (x, y) in enumerate(mesh.nodes):
        lines.append(f"v {i} {x:.17g} {y:.17g}")
    for i, (a, b, c) in enumerate(mesh.triangles):
        lines.append(f"t {i} {a} {b} {c}")
    for i, ((a, b), tag) in enumerate(zip(mesh.boundary_edges, mesh.edge_tags)):
        lines.append(f"e {i} {a} {b} {tag}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path: str) -> Mesh:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        n, t, b = int(header[0]), int(header[2]), int(header[4])
        nodes = np.empty((n, 2))
        tris = np.empty((t, 3), dtype=np.int64)
        bedges = np.empty((b, 2), dtype=np.int64)
        tags = np.empty(b, dtype=object)
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            kind, idx = parts[0], int(parts[1])
            if kind == "v":
                nodes[idx] = (float(parts[2]), float(parts[3]))
            elif kind == "t":
                tris[idx] = (int(parts[2]), int(parts[3]), int(parts[4]))
            elif kind == "e":
                bedges[idx] = (int(parts[2]), int(parts[3]))
                tags[idx] = parts[4]
            else:
                raise MeshError(f"unknown record {kind!r} in {path}")
    corners = _corner_nodes(bedges, tags)
    return Mesh(nodes, tris, bedges, tags, corners)
