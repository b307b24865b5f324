"""Quadratic (P2) tetrahedral elements: basis, quadrature, dofs, gradients.

The 10 local shape functions are the 4 vertex functions l_i(2 l_i - 1) and
the 6 edge functions 4 l_i l_j, with local edges ordered as in
``mesh.TET_EDGES``.  Global P2 nodes are the mesh vertices followed by the
edge midpoints in edge-list order, so node numbering is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, TET_EDGES


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points and weights on the reference tetrahedron.

    Weights are positive and sum to the reference volume 1/6; the rule is
    exact for polynomials up to ``degree``.
    """

    degree: int
    points: np.ndarray   # (Q, 4) barycentric coordinates
    weights: np.ndarray  # (Q,)


def _orbit_s31(a):
    b = 1.0 - 3.0 * a
    pts = np.full((4, 4), a)
    pts[np.arange(4), np.arange(4)] = b
    return pts


def _orbit_s22(a):
    b = 0.5 - a
    pts = []
    for i in range(3):
        for j in range(i + 1, 4):
            p = np.full(4, b)
            p[i] = a
            p[j] = a
            pts.append(p)
    return np.array(pts)


def make_quadrature(degree: int) -> QuadratureRule:
    """Quadrature on the reference tet for degree in {1, 2, 4, 5}.

    Degrees 4 and 5 share a 14-point rule with positive weights.
    """
    if degree == 1:
        points = np.full((1, 4), 0.25)
        weights = np.array([1.0])
    elif degree == 2:
        a = (5.0 - np.sqrt(5.0)) / 20.0
        points = _orbit_s31(a)
        weights = np.full(4, 0.25)
    elif degree in (4, 5):
        points = np.vstack([
            _orbit_s31(0.09273525031089123),
            _orbit_s31(0.31088591926330006),
            _orbit_s22(0.04550370412564965),
        ])
        weights = np.concatenate([
            np.full(4, 0.07349304311636196),
            np.full(4, 0.11268792571801585),
            np.full(6, 0.04254602077708147),
        ])
    else:
        raise ValueError(f"unsupported quadrature degree {degree}; supported: 1, 2, 4, 5")
    return QuadratureRule(degree=degree, points=points, weights=weights / 6.0)


def shape_values(bary: np.ndarray) -> np.ndarray:
    """Values of the 10 P2 shape functions; bary has shape (..., 4)."""
    bary = np.asarray(bary, dtype=float)
    l = np.moveaxis(bary, -1, 0)
    vertex = [l[i] * (2.0 * l[i] - 1.0) for i in range(4)]
    edge = [4.0 * l[i] * l[j] for i, j in TET_EDGES]
    return np.stack(vertex + edge, axis=-1)


class DofMap:
    """Bijection between (node, component) pairs and flat dof indices."""

    components = 3

    def __init__(self, node_count: int):
        self.node_count = node_count

    @property
    def size(self) -> int:
        return self.components * self.node_count

    def index(self, node, component):
        return 3 * np.asarray(node) + component

    def node_component(self, dof):
        dof = np.asarray(dof)
        return dof // 3, dof % 3

    def node_dofs(self, nodes) -> np.ndarray:
        """All 3 dof indices of the given nodes, flattened."""
        nodes = np.asarray(nodes, dtype=np.int64)
        return (3 * nodes[:, None] + np.arange(3)).ravel()


@dataclass
class DeformationField:
    """Nodal deformation positions, flattened as dof = 3*node + component.

    Treated as immutable once handed to assembly routines (gradient batches
    are memoized per quadrature degree).
    """

    dofs: np.ndarray

    def __post_init__(self):
        self.dofs = np.asarray(self.dofs, dtype=float)
        if not np.all(np.isfinite(self.dofs)):
            raise ValueError("deformation field has non-finite entries")
        self._gradient_cache: dict = {}

    def positions(self) -> np.ndarray:
        """View of the dofs as an (nodes, 3) array."""
        return self.dofs.reshape(-1, 3)

    def copy(self) -> "DeformationField":
        return DeformationField(self.dofs.copy())

    @classmethod
    def identity(cls, space: "P2Space") -> "DeformationField":
        return cls(space.nodes.ravel().copy())

    @classmethod
    def affine(cls, space: "P2Space", matrix, shift=None) -> "DeformationField":
        """Field y(x) = A x + b interpolated on the P2 nodes (exact)."""
        A = np.asarray(matrix, dtype=float)
        pos = space.nodes @ A.T
        if shift is not None:
            pos = pos + np.asarray(shift, dtype=float)
        return cls(pos.ravel())


class P2Space:
    """P2 vector-valued finite element space on a tetrahedral mesh.

    Precomputes per-element geometry and caches shape-function gradients and
    physical quadrature weights per rule degree.  All arrays are read-only by
    convention; instances may be shared across threads.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        nv = mesh.vertex_count
        midpoints = 0.5 * (mesh.nodes[mesh.edges[:, 0]] + mesh.nodes[mesh.edges[:, 1]])
        self.nodes = np.vstack([mesh.nodes, midpoints])
        self.dofmap = DofMap(self.nodes.shape[0])

        eidx = mesh.edge_index()
        elem_nodes = np.empty((mesh.tet_count, 10), dtype=np.int64)
        elem_nodes[:, :4] = mesh.tets
        for le, (a, b) in enumerate(TET_EDGES):
            va = mesh.tets[:, a]
            vb = mesh.tets[:, b]
            lo = np.minimum(va, vb)
            hi = np.maximum(va, vb)
            elem_nodes[:, 4 + le] = [nv + eidx[(int(l), int(h))] for l, h in zip(lo, hi)]
        self.element_nodes = elem_nodes
        self.element_dofs = (3 * elem_nodes[:, :, None] + np.arange(3)).reshape(-1, 30)

        # affine geometry: gradients of the barycentric coordinates, constant
        # per element, plus |det B| = 6 * volume
        verts = mesh.nodes[mesh.tets]          # (E, 4, 3)
        B = (verts[:, 1:] - verts[:, :1]).transpose(0, 2, 1)   # columns = edges
        detB = np.linalg.det(B)
        if np.any(detB <= 0):
            raise ValueError("mesh contains degenerate or inverted tets")
        Binv = np.linalg.inv(B)
        grad_l = np.empty((mesh.tet_count, 4, 3))
        grad_l[:, 1:] = Binv
        grad_l[:, 0] = -Binv.sum(axis=1)
        self.bary_gradients = grad_l
        self.det_jacobian = detB
        self._grad_cache: dict[int, np.ndarray] = {}
        self._weight_cache: dict[int, np.ndarray] = {}
        self.cache: dict[str, object] = {}   # scratch for assembly patterns etc.

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]

    @property
    def ndofs(self) -> int:
        return self.dofmap.size

    @property
    def element_count(self) -> int:
        return self.mesh.tet_count

    def gradients(self, degree: int) -> np.ndarray:
        """Shape gradients at all quadrature points, shape (E, Q, 10, 3)."""
        if degree not in self._grad_cache:
            rule = make_quadrature(degree)
            self._grad_cache[degree] = self._gradients_at(rule.points)
        return self._grad_cache[degree]

    def weights(self, degree: int) -> np.ndarray:
        """Physical quadrature weights, shape (E, Q); rows sum to tet volumes."""
        if degree not in self._weight_cache:
            rule = make_quadrature(degree)
            self._weight_cache[degree] = rule.weights[None, :] * self.det_jacobian[:, None]
        return self._weight_cache[degree]

    def _gradients_at(self, bary: np.ndarray) -> np.ndarray:
        bary = np.atleast_2d(np.asarray(bary, dtype=float))
        g = self.bary_gradients  # (E, 4, 3)
        E, Q = g.shape[0], bary.shape[0]
        out = np.empty((E, Q, 10, 3))
        for i in range(4):
            out[:, :, i, :] = (4.0 * bary[:, i] - 1.0)[None, :, None] * g[:, None, i, :]
        for le, (i, j) in enumerate(TET_EDGES):
            out[:, :, 4 + le, :] = 4.0 * (
                bary[None, :, i, None] * g[:, None, j, :]
                + bary[None, :, j, None] * g[:, None, i, :]
            )
        return out

    def element_field(self, field: DeformationField) -> np.ndarray:
        """Nodal positions per element, shape (E, 10, 3)."""
        return field.positions()[self.element_nodes]

    def deformation_gradients(self, field: DeformationField, degree: int) -> np.ndarray:
        """F at every quadrature point of every element, shape (E, Q, 3, 3)."""
        key = (id(self), degree)
        cached = field._gradient_cache.get(key)
        if cached is not None:
            return cached
        y = self.element_field(field)                    # (E, 10, 3)
        yT = np.ascontiguousarray(y.transpose(0, 2, 1))  # (E, 3, 10)
        F = yT[:, None] @ self.gradients(degree)         # batched (3,10)@(10,3)
        field._gradient_cache[key] = F
        return F


def shape_gradients(space: P2Space, tet: int, bary) -> np.ndarray:
    """Physical gradients of the 10 shape functions of one tet at one point."""
    bary = np.asarray(bary, dtype=float)
    if bary.shape != (4,) or abs(bary.sum() - 1.0) > 1e-12 or np.any(bary < -1e-12):
        raise ValueError(f"invalid barycentric point {bary}")
    g = space.bary_gradients[tet]
    out = np.empty((10, 3))
    for i in range(4):
        out[i] = (4.0 * bary[i] - 1.0) * g[i]
    for le, (i, j) in enumerate(TET_EDGES):
        out[4 + le] = 4.0 * (bary[i] * g[j] + bary[j] * g[i])
    return out


def deformation_gradient(space: P2Space, field: DeformationField, tet: int, bary) -> np.ndarray:
    """F = sum_j y_j (grad phi_j)^T at a barycentric point of one tet."""
    grads = shape_gradients(space, tet, bary)
    y = field.positions()[space.element_nodes[tet]]
    return y.T @ grads
