"""Triangulated surfaces (icosphere, structured torus) and per-vertex densities.

All downstream solvers consume the per-triangle geometry computed here:
flat-triangle areas and the constant tangential gradients of the P1 hat
functions. Meshes are immutable after construction.
"""

from dataclasses import dataclass, field

import numpy as np

MAX_ICOSPHERE_SUBDIVISIONS = 8


class MeshError(ValueError):
    """Invalid mesh construction parameters or inconsistent mesh/field pairing."""


@dataclass(frozen=True)
class SurfaceMesh:
    """Closed, oriented triangulated 2-manifold embedded in R^3.

    Attributes
    ----------
    vertices : (n, 3) float array
        Vertex coordinates.
    triangles : (t, 3) int array
        Vertex indices, counterclockwise w.r.t. the outward normal.
    areas : (t,) float array
        Flat-triangle areas.
    grads : (t, 3, 3) float array
        ``grads[e, i]`` is the (constant, tangential) gradient of the P1
        basis function of local vertex ``i`` on triangle ``e``.
    params : (n, 2) float array
        Intrinsic angle coordinates per vertex: (colatitude, longitude)
        for sphere meshes, (u, v) for torus meshes.
    kind : str
        ``"sphere"``, ``"torus"`` or ``"generic"``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    areas: np.ndarray = field(repr=False)
    grads: np.ndarray = field(repr=False)
    params: np.ndarray = field(repr=False)
    kind: str = "generic"

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    def vertex_areas(self) -> np.ndarray:
        """Lumped vertex areas: one third of each incident triangle."""
        va = np.zeros(self.num_vertices)
        np.add.at(va, self.triangles.ravel(), np.repeat(self.areas / 3.0, 3))
        return va

    def edge_lengths(self) -> np.ndarray:
        """Lengths of the three edges of every triangle, shape (t, 3)."""
        p = self.vertices[self.triangles]
        e = p[:, [2, 0, 1], :] - p[:, [1, 2, 0], :]
        return np.linalg.norm(e, axis=2)


@dataclass
class DensityField:
    """Per-vertex values in [0, 1] attached to a mesh."""

    mesh: SurfaceMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.num_vertices,):
            raise MeshError(
                f"density has {self.values.shape} values for a mesh with "
                f"{self.mesh.num_vertices} vertices"
            )
        if np.any(self.values < -1e-12) or np.any(self.values > 1 + 1e-12):
            raise MeshError("density values must lie in [0, 1]")
        self.values = np.clip(self.values, 0.0, 1.0)

    def mass(self) -> float:
        """Integral of the P1 interpolant over the surface."""
        tri_vals = self.values[self.mesh.triangles]
        return float(np.sum(self.mesh.areas * tri_vals.mean(axis=1)))


def _triangle_geometry(vertices, triangles):
    """Areas and P1 basis gradients for flat triangles.

    The gradient of the hat function of local vertex i is
    (n x e_i) / (2A) with e_i the opposite edge, taken in cyclic order,
    and n the unit normal of the triangle.
    """
    p = vertices[triangles]
    e0 = p[:, 2] - p[:, 1]
    e1 = p[:, 0] - p[:, 2]
    e2 = p[:, 1] - p[:, 0]
    normal = np.cross(e2, -e1)
    dbl_area = np.linalg.norm(normal, axis=1)
    if np.any(dbl_area <= 0.0):
        raise MeshError("degenerate (zero-area) triangle in mesh")
    areas = 0.5 * dbl_area
    unit_n = normal / dbl_area[:, None]
    grads = np.stack(
        [
            np.cross(unit_n, e0),
            np.cross(unit_n, e1),
            np.cross(unit_n, e2),
        ],
        axis=1,
    ) / dbl_area[:, None, None]
    return areas, grads


def _build_mesh(vertices, triangles, params, kind):
    vertices = np.ascontiguousarray(vertices, dtype=float)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    if triangles.min() < 0 or triangles.max() >= len(vertices):
        raise MeshError("triangle index out of range")
    areas, grads = _triangle_geometry(vertices, triangles)
    return SurfaceMesh(vertices, triangles, areas, grads, np.asarray(params, dtype=float), kind)


# Canonical icosahedron: 12 vertices from three orthogonal golden rectangles,
# 20 CCW faces (outward orientation).
_ICO_RAW_VERTS = None
_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)


def _icosahedron_vertices():
    global _ICO_RAW_VERTS
    if _ICO_RAW_VERTS is None:
        r = (1.0 + np.sqrt(5.0)) / 2.0
        v = np.array(
            [
                [-1, r, 0], [1, r, 0], [-1, -r, 0], [1, -r, 0],
                [0, -1, r], [0, 1, r], [0, -1, -r], [0, 1, -r],
                [r, 0, -1], [r, 0, 1], [-r, 0, -1], [-r, 0, 1],
            ],
            dtype=float,
        )
        _ICO_RAW_VERTS = v / np.linalg.norm(v, axis=1)[:, None]
    return _ICO_RAW_VERTS


def _sphere_params(vertices):
    z = np.clip(vertices[:, 2], -1.0, 1.0)
    theta = np.arccos(z)
    psi = np.arctan2(vertices[:, 1], vertices[:, 0])
    return np.column_stack([theta, psi])


def make_icosphere(subdivisions: int) -> SurfaceMesh:
    """Regular icosahedron subdivided ``subdivisions`` times, projected to S^2.

    Vertex ordering is deterministic: the canonical icosahedron first, then
    edge midpoints in the order they are first encountered (midpoint cache
    keyed by the sorted endpoint pair).
    """
    if subdivisions < 0:
        raise MeshError("subdivisions must be nonnegative")
    if subdivisions > MAX_ICOSPHERE_SUBDIVISIONS:
        raise MeshError(
            f"subdivisions={subdivisions} exceeds guard "
            f"({MAX_ICOSPHERE_SUBDIVISIONS}); mesh would be too large"
        )
    verts = [tuple(v) for v in _icosahedron_vertices()]
    faces = _ICO_FACES.copy()
    for _ in range(subdivisions):
        midpoint = {}
        new_faces = []

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            idx = midpoint.get(key)
            if idx is None:
                p = np.asarray(verts[a]) + np.asarray(verts[b])
                p /= np.linalg.norm(p)
                idx = len(verts)
                verts.append(tuple(p))
                midpoint[key] = idx
            return idx

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = np.array(new_faces, dtype=np.int64)
    vertices = np.array(verts, dtype=float)
    return _build_mesh(vertices, faces, _sphere_params(vertices), "sphere")


def make_torus(R: float, r: float, nu: int, nv: int) -> SurfaceMesh:
    """Structured periodic triangulation of the torus of radii (R, r).

    Vertex (i, j) sits at angles u = 2*pi*i/nu, v = 2*pi*j/nv on the
    embedding ((R + r cos v) cos u, r sin v, (R + r cos v) sin u).
    """
    if not (0.0 < r < R):
        raise MeshError(f"need 0 < r < R, got r={r}, R={R}")
    if nu < 3 or nv < 3:
        raise MeshError(f"need nu, nv >= 3, got nu={nu}, nv={nv}")
    i, j = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    u = 2.0 * np.pi * i.ravel() / nu
    v = 2.0 * np.pi * j.ravel() / nv
    vertices = np.column_stack(
        [(R + r * np.cos(v)) * np.cos(u), r * np.sin(v), (R + r * np.cos(v)) * np.sin(u)]
    )

    def vid(ii, jj):
        return (ii % nu) * nv + (jj % nv)

    tris = []
    for ii in range(nu):
        for jj in range(nv):
            a = vid(ii, jj)
            b = vid(ii + 1, jj)
            c = vid(ii + 1, jj + 1)
            d = vid(ii, jj + 1)
            # split each quad along the (a, c) diagonal; orientation fixed
            # below by the signed-volume check in tests
            tris.append([a, c, b])
            tris.append([a, d, c])
    return _build_mesh(vertices, np.array(tris, dtype=np.int64), np.column_stack([u, v]), "torus")


def total_area(mesh: SurfaceMesh) -> float:
    """Sum of flat-triangle areas; the same sum FEM quadrature integrates."""
    return float(mesh.areas.sum())


def cap_radius_from_area(m: float) -> float:
    """Geodesic radius theta of the spherical cap of area m on S^2.

    Inverts m = 2*pi*(1 - cos theta).
    """
    if not (0.0 <= m <= 4.0 * np.pi):
        raise ValueError(f"cap area m={m} outside [0, 4*pi]")
    return float(np.arccos(np.clip(1.0 - m / (2.0 * np.pi), -1.0, 1.0)))


def geodesic_cap_field(mesh: SurfaceMesh, center, m: float) -> DensityField:
    """Indicator density of the geodesic cap of area m around ``center``.

    A vertex gets value 1 when its angle to the center is at most the cap
    radius, with a 1e-9 slack in cosine space so boundary vertices are kept.
    """
    if mesh.kind != "sphere":
        raise MeshError("geodesic caps are defined on sphere meshes only")
    if not (0.0 < m < 4.0 * np.pi):
        raise ValueError(f"cap area m={m} outside (0, 4*pi)")
    center = np.asarray(center, dtype=float)
    norm = np.linalg.norm(center)
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"cap center must be a unit vector (|c|={norm})")
    center = center / norm
    cos_radius = 1.0 - m / (2.0 * np.pi)
    inside = mesh.vertices @ center >= cos_radius - 1e-9
    return DensityField(mesh, inside.astype(float))


def constant_density(mesh: SurfaceMesh, value: float = 1.0) -> DensityField:
    """Uniform density on the mesh."""
    return DensityField(mesh, np.full(mesh.num_vertices, float(value)))


def edge_triangle_incidence(mesh: SurfaceMesh):
    """Map each undirected edge to the triangles containing it.

    Returns a dict {(i, j) with i<j: [triangle indices]}. Closed orientable
    meshes have exactly two triangles per edge, traversed in opposite
    directions.
    """
    incidence = {}
    for t, (a, b, c) in enumerate(mesh.triangles):
        for i, j in ((a, b), (b, c), (c, a)):
            key = (i, j) if i < j else (j, i)
            incidence.setdefault(key, []).append(t)
    return incidence


def nearest_vertex_transfer(source: SurfaceMesh, values: np.ndarray, target: SurfaceMesh) -> np.ndarray:
    """Transfer per-vertex values by nearest source vertex (coarse-to-fine warm start)."""
    from scipy.spatial import cKDTree

    tree = cKDTree(source.vertices)
    _, idx = tree.query(target.vertices)
    return np.asarray(values, dtype=float)[idx]
