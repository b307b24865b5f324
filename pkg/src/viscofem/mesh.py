"""Structured tetrahedral meshes of box domains with tagged boundary faces.

Boxes are split cell-by-cell into 6 tetrahedra (Kuhn subdivision), which is
conforming across neighboring cells without any parity alternation.  P2
midpoint nodes are numbered after the vertex nodes, following the edge list;
edges are stored once each, sorted lexicographically by endpoint indices.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

FACE_TAGS = ("x-", "x+", "y-", "y+", "z-", "z+")

# local edges of a tetrahedron, lexicographic in the local vertex indices;
# this order also fixes the local numbering of P2 midpoint nodes
TET_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))

_PERMUTATIONS = tuple(itertools.permutations((0, 1, 2)))


@dataclass(frozen=True)
class BoxSpec:
    """Axis-aligned box with a number of cells per axis."""

    lower: tuple[float, float, float]
    upper: tuple[float, float, float]
    divisions: tuple[int, int, int]

    def __post_init__(self):
        if len(self.lower) != 3 or len(self.upper) != 3 or len(self.divisions) != 3:
            raise ValueError("BoxSpec requires 3 components per field")
        if not all(u > l for l, u in zip(self.lower, self.upper)):
            raise ValueError(f"degenerate box: lower={self.lower}, upper={self.upper}")
        if not all(int(n) == n and n >= 1 for n in self.divisions):
            raise ValueError(f"divisions must be positive integers, got {self.divisions}")

    @property
    def volume(self) -> float:
        return float(np.prod([u - l for l, u in zip(self.lower, self.upper)]))


@dataclass(frozen=True)
class Mesh:
    """Conforming tetrahedral mesh.

    Attributes
    ----------
    nodes : (n, 3) float array
        Vertex coordinates in the reference configuration.
    tets : (E, 4) int array
        Vertex indices, ordered so every signed volume is positive.
    edges : (ne, 2) int array
        Each geometric edge once, rows sorted lexicographically.  Midpoint
        node ``k`` of the P2 space sits on ``edges[k - len(nodes)]``.
    boundary_faces : (nb, 3) int array
        Vertex triples of boundary triangles.
    boundary_tags : tuple of str
        One tag per boundary face (``"x-"`` ... ``"z+"`` for box meshes).
    """

    nodes: np.ndarray
    tets: np.ndarray
    edges: np.ndarray
    boundary_faces: np.ndarray
    boundary_tags: tuple[str, ...]

    dim = 3

    @property
    def vertex_count(self) -> int:
        return self.nodes.shape[0]

    @property
    def tet_count(self) -> int:
        return self.tets.shape[0]

    def edge_index(self) -> dict[tuple[int, int], int]:
        """Map sorted vertex pairs to edge (and thus midpoint node) indices."""
        return {(int(a), int(b)): k for k, (a, b) in enumerate(self.edges)}


def tet_volumes(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Signed volumes of all tetrahedra."""
    v = nodes[tets]
    e = v[:, 1:] - v[:, :1]
    return np.linalg.det(e) / 6.0


def build_box_mesh(spec: BoxSpec) -> Mesh:
    """Mesh a box with 6 tetrahedra per hexahedral cell.

    Node count is prod(divisions + 1), tet count 6 * prod(divisions).  All
    boundary faces are tagged with the box face they lie on.
    """
    nx, ny, nz = (int(n) for n in spec.divisions)
    xs = np.linspace(spec.lower[0], spec.upper[0], nx + 1)
    ys = np.linspace(spec.lower[1], spec.upper[1], ny + 1)
    zs = np.linspace(spec.lower[2], spec.upper[2], nz + 1)

    # vertex id = (k*(ny+1) + j)*(nx+1) + i, x fastest
    K, J, I = np.meshgrid(np.arange(nz + 1), np.arange(ny + 1), np.arange(nx + 1),
                          indexing="ij")
    ijk = np.column_stack([I.ravel(), J.ravel(), K.ravel()])
    nodes = np.column_stack([xs[ijk[:, 0]], ys[ijk[:, 1]], zs[ijk[:, 2]]])

    def vid(i, j, k):
        return (k * (ny + 1) + j) * (nx + 1) + i

    tets = []
    unit = np.eye(3, dtype=np.int64)
    for i, j, k in itertools.product(range(nx), range(ny), range(nz)):
        base = np.array((i, j, k), dtype=np.int64)
        for perm in _PERMUTATIONS:
            path = [base]
            for axis in perm:
                path.append(path[-1] + unit[axis])
            ids = [vid(*p) for p in path]
            # odd permutations trace a negatively oriented path; swap to fix
            parity = (perm in ((0, 1, 2), (1, 2, 0), (2, 0, 1)))
            if not parity:
                ids[2], ids[3] = ids[3], ids[2]
            tets.append(ids)
    tets = np.asarray(tets, dtype=np.int64)

    vols = tet_volumes(nodes, tets)
    if np.any(vols <= 0):
        raise RuntimeError("internal error: non-positive tet volume in Kuhn split")

    boundary_faces, boundary_tags = _boundary_faces(tets, ijk, (nx, ny, nz))
    edges = _unique_edges(tets)
    return Mesh(
        nodes=nodes,
        tets=tets,
        edges=edges,
        boundary_faces=boundary_faces,
        boundary_tags=tuple(boundary_tags),
    )


def _unique_edges(tets: np.ndarray) -> np.ndarray:
    pairs = tets[:, TET_EDGES]  # (E, 6, 2)
    pairs = np.sort(pairs.reshape(-1, 2), axis=1)
    return np.unique(pairs, axis=0)


def _face_scan(tets: np.ndarray) -> dict[tuple[int, int, int], int]:
    """Count how many tets own each (sorted) vertex triple."""
    counts: dict[tuple[int, int, int], int] = {}
    local = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))
    for tet in tets:
        for f in local:
            key = tuple(sorted(int(tet[m]) for m in f))
            counts[key] = counts.get(key, 0) + 1
    return counts


def _boundary_faces(tets, ijk, divisions):
    counts = _face_scan(tets)
    bad = [k for k, c in counts.items() if c > 2]
    if bad:
        raise RuntimeError(f"non-conforming mesh: face {bad[0]} shared by >2 tets")
    faces = []
    tags = []
    planes = [(0, 0, "x-"), (0, divisions[0], "x+"),
              (1, 0, "y-"), (1, divisions[1], "y+"),
              (2, 0, "z-"), (2, divisions[2], "z+")]
    for key, c in sorted(counts.items()):
        if c != 1:
            continue
        tri = np.array(key)
        tag = None
        for axis, level, name in planes:
            if np.all(ijk[tri, axis] == level):
                tag = name
                break
        if tag is None:
            raise RuntimeError(f"boundary face {key} not on any box plane")
        faces.append(tri)
        tags.append(tag)
    return np.asarray(faces, dtype=np.int64), tags


def validate_mesh(mesh: Mesh) -> None:
    """Check conformity invariants; raises ValueError on any violation."""
    vols = tet_volumes(mesh.nodes, mesh.tets)
    if np.any(vols <= 0):
        raise ValueError(f"{np.sum(vols <= 0)} tets with non-positive volume")
    counts = _face_scan(mesh.tets)
    if any(c > 2 for c in counts.values()):
        raise ValueError("a face is shared by more than two tets")
    boundary = {tuple(sorted(int(v) for v in f)) for f in mesh.boundary_faces}
    scan_boundary = {k for k, c in counts.items() if c == 1}
    if boundary != scan_boundary:
        raise ValueError("boundary_faces do not match the single-owner faces")
    edges = _unique_edges(mesh.tets)
    if edges.shape != mesh.edges.shape or np.any(edges != mesh.edges):
        raise ValueError("edge list does not enumerate each geometric edge once")


def tag_dirichlet(mesh: Mesh, tags: set[str]) -> np.ndarray:
    """P2 node indices (vertices and edge midpoints) on the tagged faces.

    Midpoint node indices follow the vertex block: node ``nv + k`` is the
    midpoint of ``mesh.edges[k]``.
    """
    known = set(mesh.boundary_tags)
    unknown = set(tags) - known
    if unknown:
        raise ValueError(f"unknown boundary tags {sorted(unknown)}; mesh has {sorted(known)}")
    if not tags:
        return np.empty(0, dtype=np.int64)
    nv = mesh.vertex_count
    eidx = mesh.edge_index()
    picked: set[int] = set()
    for face, tag in zip(mesh.boundary_faces, mesh.boundary_tags):
        if tag not in tags:
            continue
        a, b, c = (int(v) for v in face)
        picked.update((a, b, c))
        for u, v in ((a, b), (a, c), (b, c)):
            picked.add(nv + eidx[(min(u, v), max(u, v))])
    return np.array(sorted(picked), dtype=np.int64)
