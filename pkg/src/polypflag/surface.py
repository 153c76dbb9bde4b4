"""Triangulated colon-wall extraction and per-vertex shape descriptors.

The wall is the alpha = 0.7 iso-surface of the smoothed segmentation,
extracted by marching cubes.  Each vertex carries the shape index and the
curvedness of the iso-surface, sampled from the volume's curvature grids by
trilinear interpolation (computing principal curvatures directly from the
volume is markedly more stable than differentiating the mesh).  Geodesic
distances over the surface come from Dijkstra on the edge graph augmented
with unfolded one-ring shortcuts, accurate to a few percent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.csgraph import dijkstra
from skimage.measure import marching_cubes as _skimage_marching_cubes

from .volume import ScalarVolume, curvature_field, curvedness, shape_index

SI_REGULAR = 0
SI_UMBILIC = 1   # k_max - k_min under the umbilic floor; si holds the limit value
SI_UNDEFINED = 2  # degenerate gradient or flat umbilic; si is NaN

UMBILIC_SPREAD = 1e-4   # 1/mm
FLAT_CURVATURE = 1e-4   # 1/mm; below this magnitude an umbilic is flat
CURVEDNESS_FLOOR = -25.0
DEGENERATE_AREA = 1e-9  # mm^2


@dataclass
class TriMesh:
    """Indexed triangle surface in mm with optional per-vertex descriptors."""

    vertices: np.ndarray                       # (n, 3) float64
    faces: np.ndarray                          # (m, 3) int32, wound toward the lumen
    shape_index: np.ndarray | None = None      # (n,) float64, NaN where undefined
    curvedness: np.ndarray | None = None       # (n,) float64, log scale
    si_flag: np.ndarray | None = None          # (n,) uint8, SI_* codes
    area_weight: np.ndarray = field(default=None, repr=False)  # (n,) mm^2

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int32).reshape(-1, 3)
        if self.area_weight is None:
            self.area_weight = self._vertex_areas()
        self._adjacency = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def triangle_areas(self) -> np.ndarray:
        t = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def _vertex_areas(self) -> np.ndarray:
        w = np.zeros(len(self.vertices))
        if len(self.faces):
            areas = self.triangle_areas() / 3.0
            for col in range(3):
                np.add.at(w, self.faces[:, col], areas)
        return w

    def edges(self) -> np.ndarray:
        """Unique undirected edges as an (e, 2) array with e0 < e1."""
        if not len(self.faces):
            return np.zeros((0, 2), dtype=np.int64)
        raw = np.vstack([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        raw = np.sort(raw, axis=1)
        return np.unique(raw, axis=0).astype(np.int64)

    def adjacency(self) -> list[np.ndarray]:
        """One-ring vertex neighborhoods."""
        if self._adjacency is None:
            nbr = [[] for _ in range(len(self.vertices))]
            for a, b in self.edges():
                nbr[a].append(b)
                nbr[b].append(a)
            self._adjacency = [np.array(sorted(n), dtype=np.int64) for n in nbr]
        return self._adjacency

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges()) + self.n_faces


def empty_mesh() -> TriMesh:
    return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int32))


def marching_cubes(u: ScalarVolume, alpha: float = 0.7) -> TriMesh:
    """Watertight triangulation of the alpha-level set in physical mm.

    Returns an empty mesh when no voxel pair straddles the level.  Faces are
    wound so the right-hand normal points toward the lumen (increasing u).
    """
    lo, hi = u.value_range()
    if not lo < alpha < hi:
        return empty_mesh()
    verts, faces, normals, _ = _skimage_marching_cubes(
        u.data.astype(np.float64), level=alpha, spacing=u.spacing)

    # drop degenerate triangles
    t = verts[faces]
    areas = 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)
    faces = faces[areas > DEGENERATE_AREA]

    # orient the winding toward the lumen using the volume gradient
    mesh = TriMesh(verts, faces)
    if len(faces):
        centroids = verts[faces].mean(axis=1)
        grad = np.gradient(u.data.astype(np.float64), *u.spacing)
        coords = (centroids / np.asarray(u.spacing)).T
        g_at = np.stack([ndimage.map_coordinates(g, coords, order=1, mode="nearest")
                         for g in grad], axis=1)
        fn = np.cross(verts[faces[:, 1]] - verts[faces[:, 0]],
                      verts[faces[:, 2]] - verts[faces[:, 0]])
        agree = np.sum(np.sign(np.einsum("ij,ij->i", fn, g_at)))
        if agree < 0:
            mesh = TriMesh(verts, faces[:, ::-1])
    return mesh


def vertex_shape_index(u: ScalarVolume, mesh: TriMesh) -> TriMesh:
    """Annotate the mesh with per-vertex shape index and curvedness.

    Curvatures are trilinearly sampled from the volume's curvature grids at
    each vertex.  Vertices with a degenerate gradient are flagged undefined
    (NaN shape index); umbilic vertices carry the limit value -sign(H) and an
    umbilic flag, with flat umbilics demoted to undefined.
    """
    if mesh.n_vertices == 0:
        return TriMesh(mesh.vertices, mesh.faces,
                       np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.uint8))
    grids = curvature_field(u)
    coords = (mesh.vertices / np.asarray(u.spacing)).T
    sample = lambda g: ndimage.map_coordinates(g, coords, order=1, mode="nearest")
    k_min = sample(grids.k_min)
    k_max = sample(grids.k_max)
    ok = sample(grids.defined.astype(np.float64)) > 0.5

    spread = k_max - k_min
    mean = 0.5 * (k_max + k_min)
    umbilic = spread < UMBILIC_SPREAD
    flat = umbilic & (np.abs(mean) < FLAT_CURVATURE)

    si = shape_index(k_min, k_max)
    si = np.where(umbilic, -np.sign(mean), si)
    flags = np.where(umbilic, SI_UMBILIC, SI_REGULAR).astype(np.uint8)
    undefined = ~ok | flat
    flags[undefined] = SI_UNDEFINED
    si = np.where(undefined, np.nan, np.clip(si, -1.0, 1.0))
    c = np.maximum(curvedness(k_min, k_max), CURVEDNESS_FLOOR)
    return TriMesh(mesh.vertices, mesh.faces, si, c, flags, mesh.area_weight)


# ---------------------------------------------------------------------------
# Geodesics
# ---------------------------------------------------------------------------

GEODESIC_STEINER_POINTS = 2  # subdivision points per edge


def geodesic_graph(mesh: TriMesh,
                   steiner: int = GEODESIC_STEINER_POINTS) -> sparse.csr_matrix:
    """Steiner-point path graph over the surface.

    Each edge is subdivided by `steiner` extra nodes and every pair of nodes
    on a triangle's boundary is linked by its straight in-plane segment, so
    shortest graph paths can cross triangle interiors in nearly arbitrary
    directions; a couple of points per edge keeps flat-grid distances within
    a few percent of Euclidean.  Node ids 0..n_vertices-1 are the mesh
    vertices.
    """
    V = mesh.vertices
    n = mesh.n_vertices
    edges = mesh.edges()
    if steiner <= 0 or not len(mesh.faces):
        lengths = np.linalg.norm(V[edges[:, 0]] - V[edges[:, 1]], axis=1)
        return sparse.coo_matrix((lengths, (edges[:, 0], edges[:, 1])),
                                 shape=(n, n)).tocsr()

    n_e = len(edges)
    total = n + steiner * n_e
    fracs = np.arange(1, steiner + 1) / (steiner + 1.0)
    # steiner node positions, ordered low-vertex -> high-vertex per edge
    s_pos = (V[edges[:, 0], None, :]
             + fracs[None, :, None] * (V[edges[:, 1]] - V[edges[:, 0]])[:, None, :])
    s_pos = s_pos.reshape(-1, 3)

    # per-face edge indices via sorted edge codes
    codes = edges[:, 0] * (n + 1) + edges[:, 1]
    f = mesh.faces.astype(np.int64)
    fe = []
    for i in range(3):
        a, b = f[:, i], f[:, (i + 1) % 3]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        fe.append(np.searchsorted(codes, lo * (n + 1) + hi))
    fe = np.stack(fe, axis=1)

    # nine boundary nodes per face: three vertices + steiner points of each edge
    ids = np.concatenate(
        [f] + [n + steiner * fe[:, i:i + 1] + np.arange(steiner) for i in range(3)],
        axis=1)
    pos = np.concatenate([V[f]] + [s_pos[steiner * fe[:, i:i + 1] + np.arange(steiner)]
                                   for i in range(3)], axis=1)
    m = ids.shape[1]
    iu, ju = np.triu_indices(m, k=1)
    rows = ids[:, iu].ravel()
    cols = ids[:, ju].ravel()
    vals = np.linalg.norm(pos[:, iu, :] - pos[:, ju, :], axis=2).ravel()
    lo = np.minimum(rows, cols).astype(np.int64)
    hi = np.maximum(rows, cols).astype(np.int64)
    _, first = np.unique(lo * total + hi, return_index=True)
    return sparse.coo_matrix((vals[first], (lo[first], hi[first])),
                             shape=(total, total)).tocsr()


def geodesic_distances(mesh: TriMesh, sources, graph=None) -> np.ndarray:
    """Approximate geodesic distance (mm) from each vertex to the source set.

    Zero on sources, +inf on vertices disconnected from every source.
    """
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    if sources.size == 0:
        raise ValueError("sources must be non-empty")
    if graph is None:
        graph = geodesic_graph(mesh)
    d = dijkstra(graph, directed=False, indices=sources, min_only=True)
    return d[:mesh.n_vertices]


# ---------------------------------------------------------------------------
# ASCII mesh exchange (positions + per-vertex scalars)
# ---------------------------------------------------------------------------

def save_mesh(mesh: TriMesh, path) -> Path:
    path = Path(path)
    n, m = mesh.n_vertices, mesh.n_faces
    si = mesh.shape_index if mesh.shape_index is not None else np.full(n, np.nan)
    c = mesh.curvedness if mesh.curvedness is not None else np.full(n, np.nan)
    fl = mesh.si_flag if mesh.si_flag is not None else np.full(n, SI_UNDEFINED, dtype=np.uint8)
    lines = ["polypflag-mesh-v1", f"{n} {m}",
             "# x_mm y_mm z_mm shape_index curvedness flag area_weight_mm2"]
    for i in range(n):
        lines.append("%.9g %.9g %.9g %.9g %.9g %d %.9g"
                     % (*mesh.vertices[i], si[i], c[i], fl[i], mesh.area_weight[i]))
    for f in mesh.faces:
        lines.append("%d %d %d" % tuple(f))
    path.write_text("\n".join(lines) + "\n")
    return path


def load_mesh(path) -> TriMesh:
    lines = [ln for ln in Path(path).read_text().splitlines()
             if ln.strip() and not ln.startswith("#")]
    if lines[0] != "polypflag-mesh-v1":
        raise ValueError(f"not a polypflag mesh file: {path}")
    n, m = (int(t) for t in lines[1].split())
    verts = np.zeros((n, 3))
    si = np.zeros(n)
    c = np.zeros(n)
    fl = np.zeros(n, dtype=np.uint8)
    aw = np.zeros(n)
    for i, ln in enumerate(lines[2:2 + n]):
        t = ln.split()
        verts[i] = [float(v) for v in t[:3]]
        si[i], c[i], fl[i], aw[i] = float(t[3]), float(t[4]), int(t[5]), float(t[6])
    faces = np.array([[int(v) for v in ln.split()] for ln in lines[2 + n:2 + n + m]],
                     dtype=np.int32).reshape(-1, 3)
    return TriMesh(verts, faces, si, c, fl, aw)
