"""Flat-triangle approximations of the unit sphere.

Nodes always lie exactly on the sphere; triangles are flat.  Functions on the
sphere are transported to the polyhedron and back through the radial
(closest-point) projection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, ResourceLimitError, TubularNeighborhoodError

MAX_LEVEL = 8
_DEGENERATE_AREA = 1e-14


@dataclass
class ReferenceMesh:
    """Triangulated surface with nodes on the reference sphere.

    Attributes
    ----------
    nodes : ndarray, shape (J, 3)
    triangles : ndarray, shape (F, 3)
        0-based node indices, counter-clockwise seen from outside.
    level : int
        Subdivision depth, ``-1`` for meshes not produced by the generator.
    h, gamma_h : float
        Largest smallest-enclosing-disc diameter and the quasi-uniformity
        ratio ``min(inscribed diameter) / h``.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    level: int = -1
    h: float = field(init=False)
    gamma_h: float = field(init=False)

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 3:
            raise ValueError("nodes must have shape (J, 3)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must have shape (F, 3)")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.nodes)):
            raise ValueError("triangle index out of range")
        self.h, self.gamma_h = mesh_parameters(self)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs, lexicographically ordered."""
        return _unique_edges(self.triangles)

    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def total_area(self) -> float:
        return float(self.areas().sum())

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes.tolist(),
            "triangles": self.triangles.tolist(),
            "level": int(self.level),
            "h": float(self.h),
            "gamma_h": float(self.gamma_h),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict())
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, data: dict) -> "ReferenceMesh":
        return cls(np.asarray(data["nodes"], float), np.asarray(data["triangles"], np.int64),
                   level=int(data.get("level", -1)))


@dataclass
class TriangleFrame:
    """Per-triangle geometry used by the quadrature rules."""

    index: int
    area: float
    p1_basis_gradients: np.ndarray  # (3, 3), row k = gradient of the k-th local basis function
    edge_midpoints: np.ndarray  # (3, 3), row k = midpoint of the edge opposite local vertex k+2
    lifted_midpoints: np.ndarray  # (3, 3)
    frame: np.ndarray  # (3, 2) orthonormal tangent pair as columns


def _unique_edges(triangles):
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def _icosahedron():
    """Regular icosahedron with a vertex at each pole."""
    z = 1.0 / np.sqrt(5.0)
    s = 2.0 / np.sqrt(5.0)
    verts = [(0.0, 0.0, 1.0)]
    for k in range(5):
        a = 2.0 * np.pi * k / 5.0
        verts.append((s * np.cos(a), s * np.sin(a), z))
    for k in range(5):
        a = 2.0 * np.pi * k / 5.0 + np.pi / 5.0
        verts.append((s * np.cos(a), s * np.sin(a), -z))
    verts.append((0.0, 0.0, -1.0))
    tris = []
    for k in range(5):
        k1 = (k + 1) % 5
        tris.append((0, 1 + k, 1 + k1))
        tris.append((1 + k, 6 + k, 1 + k1))
        tris.append((1 + k1, 6 + k, 6 + k1))
        tris.append((11, 6 + k1, 6 + k))
    nodes = np.array(verts)
    tris = np.array(tris, dtype=np.int64)
    p = nodes[tris]
    outward = np.einsum("ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p.sum(axis=1))
    flip = outward < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return nodes, tris


def _subdivide(nodes, tris):
    edges = _unique_edges(tris)
    n0 = len(nodes)
    # edges are sorted lexicographically, so new vertex ids follow parent-edge order
    key = edges[:, 0] * n0 + edges[:, 1]
    mids = nodes[edges[:, 0]] + nodes[edges[:, 1]]
    mids /= np.linalg.norm(mids, axis=1)[:, None]

    def mid(i, j):
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        return n0 + np.searchsorted(key, lo * n0 + hi)

    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
    new = np.stack([
        np.stack([a, ab, ca], 1),
        np.stack([ab, b, bc], 1),
        np.stack([ca, bc, c], 1),
        np.stack([ab, bc, ca], 1),
    ], axis=1).reshape(-1, 3)
    return np.vstack([nodes, mids]), new


def build_icosphere(level: int) -> ReferenceMesh:
    """Icosahedron refined ``level`` times by 1-to-4 splits, new nodes pushed radially to the sphere."""
    level = int(level)
    if level < 0:
        raise ValueError("level must be nonnegative")
    if level > MAX_LEVEL:
        raise ResourceLimitError(f"icosphere level {level} exceeds the guard {MAX_LEVEL}")
    nodes, tris = _icosahedron()
    for _ in range(level):
        nodes, tris = _subdivide(nodes, tris)
    return ReferenceMesh(nodes, tris, level=level)


def closest_point_lift(x):
    """Radial projection onto the unit sphere; accepts a point or an (n, 3) array."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(r < 0.5):
        raise TubularNeighborhoodError("point lies outside the tubular neighbourhood |x| >= 1/2")
    return x / r


def _triangle_shape(p):
    """Enclosing- and inscribed-disc diameters for an (F, 3, 3) array of flat triangles."""
    l0 = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    l1 = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    l2 = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    area = 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    lengths = np.sort(np.stack([l0, l1, l2], 1), axis=1)
    a, b, c = lengths[:, 0], lengths[:, 1], lengths[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        circum = l0 * l1 * l2 / (2.0 * area)
    obtuse = c * c > a * a + b * b
    rho = np.where(obtuse, c, circum)
    sigma = 4.0 * area / (l0 + l1 + l2)
    return rho, sigma


def mesh_parameters(mesh) -> tuple[float, float]:
    """Return ``(h, gamma_h)`` for a mesh."""
    p = mesh.nodes[mesh.triangles]
    rho, sigma = _triangle_shape(p)
    h = float(rho.max())
    return h, float(sigma.min() / h)


def triangle_geometry(nodes, triangles):
    """Vectorised per-triangle geometry.

    Returns a dict with ``area`` (F,), ``grads`` (F, 3, 3) P1 basis gradients
    (row k belongs to local vertex k), ``mid`` (F, 3, 3) edge midpoints,
    ``lifted`` (F, 3, 3) their radial projections and ``frame`` (F, 3, 2).
    Midpoint k sits on the edge between local vertices k and k+1.
    """
    p = nodes[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    cr = np.cross(e1, e2)
    twice_area = np.linalg.norm(cr, axis=1)
    area = 0.5 * twice_area
    if np.any(area < _DEGENERATE_AREA):
        bad = int(np.argmax(area < _DEGENERATE_AREA))
        raise DegenerateGeometryError(f"triangle {bad} has area {area[bad]:.3e}")
    normal = cr / twice_area[:, None]
    grads = np.empty_like(p)
    for k in range(3):
        opp = p[:, (k + 2) % 3] - p[:, (k + 1) % 3]
        # gradient is perpendicular to the opposite edge, pointing towards vertex k
        grads[:, k] = np.cross(normal, opp) / twice_area[:, None]
    mid = 0.5 * (p + np.roll(p, -1, axis=1))
    t1 = e1 / np.linalg.norm(e1, axis=1)[:, None]
    t2 = np.cross(normal, t1)
    frame = np.stack([t1, t2], axis=2)
    return {
        "area": area,
        "grads": grads,
        "mid": mid,
        "lifted": closest_point_lift(mid),
        "frame": frame,
        "normal": normal,
    }


def triangle_frame(mesh: ReferenceMesh, tri_index: int) -> TriangleFrame:
    if not 0 <= tri_index < mesh.n_triangles:
        raise IndexError(f"triangle index {tri_index} out of range")
    g = triangle_geometry(mesh.nodes, mesh.triangles[tri_index:tri_index + 1])
    return TriangleFrame(
        index=int(tri_index),
        area=float(g["area"][0]),
        p1_basis_gradients=g["grads"][0],
        edge_midpoints=g["mid"][0],
        lifted_midpoints=g["lifted"][0],
        frame=g["frame"][0],
    )
