"""Global sparse assembly for the per-step velocity system.

The stiffness matrix of the linearized power functional is

    K[(i,a),(j,b)] = int_Omega c (Psi_ia : Psi_jb) dx,
    Psi_ia = (grad phi_i e_a)^T grad y + (grad y)^T (grad phi_i e_a),

so the quadratic form is z^T K z = int c |(grad z)^T grad y + (grad y)^T grad z|^2.
With elementwise-linear grad y the integrand has degree 4 and is integrated
exactly; the discrete kernel {a + A y : A skew} is then annihilated to
roundoff.  The right-hand side is b_i = -int PK1(grad y) : grad phi_i plus
body-force and traction load terms.

Sparse matrices are CSR; K and M share one sparsity pattern per space, which
is cached on the space together with the scatter slots, so per-step assembly
only recomputes values (fixed accumulation order, bit-reproducible in serial).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np
import scipy.sparse as sp

from . import material
from .fem import DeformationField, P2Space, make_quadrature, shape_values
from .material import MaterialParams
from .mesh import tag_dirichlet

STIFFNESS_DEGREE = 4   # exact for the degree-4 velocity-form integrand
RHS_DEGREE = 5         # pragmatic cap for the non-polynomial stress term


class NonInvertibleDeformationError(ValueError):
    """det(grad y) <= 0 at a quadrature point."""

    def __init__(self, element: int, point: int):
        self.element = int(element)
        self.point = int(point)
        super().__init__(
            f"non-invertible deformation gradient in element {element}, "
            f"quadrature point {point}"
        )


@dataclass
class SymmetricSparseMatrix:
    """CSR matrix tagged as symmetric; thin wrapper over scipy.sparse."""

    mat: sp.csr_matrix
    symmetric: bool = True

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    @property
    def indptr(self) -> np.ndarray:
        return self.mat.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.mat.indices

    @property
    def values(self) -> np.ndarray:
        return self.mat.data

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.mat @ x

    def diagonal(self) -> np.ndarray:
        return self.mat.diagonal()

    def toarray(self) -> np.ndarray:
        return self.mat.toarray()

    def norm_fro(self) -> float:
        return float(np.sqrt(np.sum(self.mat.data ** 2)))


@dataclass(frozen=True)
class LoadSpec:
    """Body force, tagged tractions and tagged Dirichlet regions.

    ``dirichlet`` maps a boundary tag to either ``"reference"`` (pin nodes at
    their reference coordinates) or a 3-vector offset added to the reference
    coordinates.  The pinned positions are constant in time.
    """

    body_force: tuple[float, float, float] = (0.0, 0.0, 0.0)
    traction: dict = dataclass_field(default_factory=dict)
    dirichlet: dict = dataclass_field(default_factory=dict)

    def validate_tags(self, mesh) -> None:
        known = set(mesh.boundary_tags)
        for tag in list(self.traction) + list(self.dirichlet):
            if tag not in known:
                raise ValueError(f"load tag {tag!r} not among mesh tags {sorted(known)}")

    @property
    def has_forces(self) -> bool:
        return any(v != 0.0 for v in self.body_force) or bool(self.traction)


def constrained_dofs(space: P2Space, loads: LoadSpec) -> np.ndarray:
    """Sorted dof indices pinned by the Dirichlet tags of a load spec."""
    if not loads.dirichlet:
        return np.empty(0, dtype=np.int64)
    nodes = tag_dirichlet(space.mesh, set(loads.dirichlet))
    return space.dofmap.node_dofs(nodes)


def dirichlet_positions(space: P2Space, loads: LoadSpec) -> tuple[np.ndarray, np.ndarray]:
    """(node indices, pinned positions) for all Dirichlet tags."""
    all_nodes = []
    all_pos = []
    for tag, value in loads.dirichlet.items():
        nodes = tag_dirichlet(space.mesh, {tag})
        pos = space.nodes[nodes].copy()
        if isinstance(value, str):
            if value != "reference":
                raise ValueError(f"unknown dirichlet value {value!r}")
        else:
            pos = pos + np.asarray(value, dtype=float)
        all_nodes.append(nodes)
        all_pos.append(pos)
    if not all_nodes:
        return np.empty(0, dtype=np.int64), np.empty((0, 3))
    return np.concatenate(all_nodes), np.vstack(all_pos)


def _csr_pattern(space: P2Space):
    """Canonical CSR pattern of the element-block matrix plus scatter slots."""
    cached = space.cache.get("csr_pattern")
    if cached is not None:
        return cached
    ed = space.element_dofs
    rows = np.repeat(ed, 30, axis=1).ravel()
    cols = np.tile(ed, (1, 30)).ravel()
    order = np.lexsort((cols, rows))
    rs, cs = rows[order], cols[order]
    new_group = np.empty(rs.shape, dtype=bool)
    new_group[0] = True
    new_group[1:] = (rs[1:] != rs[:-1]) | (cs[1:] != cs[:-1])
    group_id = np.cumsum(new_group) - 1
    slots = np.empty(rows.shape, dtype=np.int64)
    slots[order] = group_id
    n = space.ndofs
    uniq_rows = rs[new_group]
    uniq_cols = cs[new_group]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, uniq_rows + 1, 1)
    indptr = np.cumsum(indptr)
    pattern = (indptr, uniq_cols.astype(np.int32), slots, int(new_group.sum()))
    space.cache["csr_pattern"] = pattern
    return pattern


def _scatter(space: P2Space, block_values: np.ndarray) -> sp.csr_matrix:
    indptr, indices, slots, nnz = _csr_pattern(space)
    data = np.bincount(slots, weights=block_values.ravel(), minlength=nnz)
    return sp.csr_matrix((data, indices, indptr), shape=(space.ndofs, space.ndofs))


def assemble_stiffness(space: P2Space, field: DeformationField,
                       p: MaterialParams) -> SymmetricSparseMatrix:
    """Velocity-form stiffness matrix at the current deformation.

    Symmetric positive semidefinite; kernel contains translations and the
    skew actions A*y of the current configuration.
    """
    deg = STIFFNESS_DEGREE
    G = space.gradients(deg)                      # (E, Q, 10, 3)
    w = space.weights(deg)                        # (E, Q)
    F = space.deformation_gradients(field, deg)   # (E, Q, 3, 3)
    E, Q = w.shape

    Gt = G.transpose(0, 1, 3, 2)
    Ft = F.transpose(0, 1, 3, 2)
    GG = G @ Gt                                   # (E, Q, 10, 10)
    FF = F @ Ft                                   # f_a . f_b
    GF = G @ Ft                                   # G_i . f_b

    # K[(ia),(jb)] = sum_q 2c w [ GG[i,j] FF[a,b] + GF[i,b] GF[j,a] ],
    # contracted over q as batched matrix products
    w2c = (2.0 * p.c) * w
    GGw = (GG * w2c[:, :, None, None]).reshape(E, Q, 100).transpose(0, 2, 1)
    t1 = GGw @ FF.reshape(E, Q, 9)                                 # (E,(ij),(ab))
    blocks = t1.reshape(E, 10, 10, 3, 3).transpose(0, 1, 3, 2, 4)  # -> (i,a,j,b)
    GFw = (GF * w2c[:, :, None, None]).reshape(E, Q, 30).transpose(0, 2, 1)
    t2 = GFw @ GF.reshape(E, Q, 30)                                # (E,(ib),(ja))
    blocks = blocks + t2.reshape(E, 10, 3, 10, 3).transpose(0, 1, 4, 3, 2)
    K = _scatter(space, blocks.reshape(E, 30, 30))
    return SymmetricSparseMatrix(K)


def assemble_mass(space: P2Space) -> SymmetricSparseMatrix:
    """Unit-density vector P2 mass matrix (same sparsity pattern as K)."""
    cached = space.cache.get("mass")
    if cached is not None:
        return cached
    deg = STIFFNESS_DEGREE
    vals = shape_values(make_quadrature(deg).points)   # (Q, 10)
    w = space.weights(deg)
    mass_scalar = np.einsum("eq,qi,qj->eij", w, vals, vals, optimize=True)
    blocks = np.zeros((space.element_count, 10, 3, 10, 3))
    for a in range(3):
        blocks[:, :, a, :, a] = mass_scalar
    M = SymmetricSparseMatrix(_scatter(space, blocks.reshape(-1, 30, 30)))
    space.cache["mass"] = M
    return M


def assemble_rhs(space: P2Space, field: DeformationField, p: MaterialParams,
                 loads: LoadSpec | None = None) -> np.ndarray:
    """Load vector b_i = -int PK1(grad y):grad phi_i + force terms."""
    deg = RHS_DEGREE
    G = space.gradients(deg)
    w = space.weights(deg)
    F = space.deformation_gradients(field, deg)
    J = material.det3(F)
    if np.any(J <= 0):
        e, q = np.argwhere(J <= 0)[0]
        raise NonInvertibleDeformationError(e, q)
    P = material.stress_PK1(F, p)
    GP = G @ P.transpose(0, 1, 3, 2)              # (E, Q, 10, 3): (P G_i)_a
    b_loc = -(w[:, :, None, None] * GP).sum(axis=1)

    if loads is not None:
        loads.validate_tags(space.mesh)
        f = np.asarray(loads.body_force, dtype=float)
        if np.any(f != 0.0):
            vals = shape_values(make_quadrature(deg).points)
            phi_int = np.einsum("eq,qi->ei", w, vals, optimize=True)
            b_loc += phi_int[:, :, None] * f[None, None, :]

    b = np.zeros(space.ndofs)
    np.add.at(b, space.element_dofs, b_loc.reshape(-1, 30))

    if loads is not None and loads.traction:
        b += _traction_vector(space, loads)
    return b


# midpoint rule on the reference triangle: degree-2 exact, which is all the
# P2 trace functions need on straight-sided faces
_TRI_POINTS = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
_TRI_WEIGHTS = np.full(3, 1.0 / 3.0)


def _traction_vector(space: P2Space, loads: LoadSpec) -> np.ndarray:
    mesh = space.mesh
    nv = mesh.vertex_count
    eidx = mesh.edge_index()
    b = np.zeros(space.ndofs)
    for face, tag in zip(mesh.boundary_faces, mesh.boundary_tags):
        g = loads.traction.get(tag)
        if g is None:
            continue
        g = np.asarray(g, dtype=float)
        vs = [int(v) for v in face]
        fnodes = vs + [nv + eidx[(min(u, v), max(u, v))]
                       for u, v in ((vs[0], vs[1]), (vs[1], vs[2]), (vs[0], vs[2]))]
        x = mesh.nodes[vs]
        area = 0.5 * np.linalg.norm(np.cross(x[1] - x[0], x[2] - x[0]))
        # P2 basis on the face in face-barycentric coordinates
        for t, wq in zip(_TRI_POINTS, _TRI_WEIGHTS):
            phi = np.array([
                t[0] * (2 * t[0] - 1), t[1] * (2 * t[1] - 1), t[2] * (2 * t[2] - 1),
                4 * t[0] * t[1], 4 * t[1] * t[2], 4 * t[0] * t[2],
            ])
            for local, node in enumerate(fnodes):
                b[3 * node: 3 * node + 3] += wq * area * phi[local] * g
    return b


@dataclass
class ReducedSystem:
    """Dirichlet-eliminated system; solutions extend by zeros."""

    K: SymmetricSparseMatrix
    b: np.ndarray
    free: np.ndarray
    full_dim: int

    def expand(self, z_red: np.ndarray) -> np.ndarray:
        z = np.zeros(self.full_dim)
        z[self.free] = z_red
        return z


def apply_dirichlet(K: SymmetricSparseMatrix, b: np.ndarray,
                    constrained) -> ReducedSystem:
    """Eliminate constrained dofs symmetrically (zero boundary values)."""
    n = K.dim
    constrained = np.asarray(sorted(set(int(d) for d in np.asarray(constrained).ravel())),
                             dtype=np.int64)
    if constrained.size and (constrained.min() < 0 or constrained.max() >= n):
        raise ValueError("constrained dof index out of range")
    mask = np.ones(n, dtype=bool)
    mask[constrained] = False
    free = np.flatnonzero(mask)
    if constrained.size == 0:
        return ReducedSystem(K=K, b=b, free=free, full_dim=n)
    Kred = K.mat[free][:, free].tocsr()
    return ReducedSystem(K=SymmetricSparseMatrix(Kred), b=b[free], free=free, full_dim=n)


def reduce_matrix(M: SymmetricSparseMatrix, free: np.ndarray) -> SymmetricSparseMatrix:
    if free.size == M.dim:
        return M
    return SymmetricSparseMatrix(M.mat[free][:, free].tocsr())


def total_elastic_energy(space: P2Space, field: DeformationField,
                         p: MaterialParams) -> float:
    """int_Omega W(grad y) dx with the rhs quadrature (inf if det F <= 0)."""
    F = space.deformation_gradients(field, RHS_DEGREE)
    w = space.weights(RHS_DEGREE)
    W = material.energy_W(F, p)
    if np.any(np.isinf(W)):
        return float("inf")
    return float(np.sum(w * W))


def external_load_vector(space: P2Space, loads: LoadSpec) -> np.ndarray:
    """Work-conjugate vector of body force and tractions (no stress term)."""
    deg = RHS_DEGREE
    b = np.zeros(space.ndofs)
    f = np.asarray(loads.body_force, dtype=float)
    if np.any(f != 0.0):
        vals = shape_values(make_quadrature(deg).points)
        w = space.weights(deg)
        phi_int = np.einsum("eq,qi->ei", w, vals, optimize=True)
        b_loc = phi_int[:, :, None] * f[None, None, :]
        np.add.at(b, space.element_dofs, b_loc.reshape(-1, 30))
    if loads.traction:
        b += _traction_vector(space, loads)
    return b


def dissipation_integrals(space: P2Space, f_new: DeformationField,
                          f_old: DeformationField, p: MaterialParams) -> tuple[float, float]:
    """(int D^2 dx, int D dx) between two deformation states.

    The squared-distance integrand |C_new - C_old|^2 has polynomial degree 4
    per element, so the first integral is exact with the assembly quadrature.
    """
    deg = STIFFNESS_DEGREE
    w = space.weights(deg)
    Fn = space.deformation_gradients(f_new, deg)
    Fo = space.deformation_gradients(f_old, deg)
    dC = np.swapaxes(Fn, -1, -2) @ Fn - np.swapaxes(Fo, -1, -2) @ Fo
    d2 = p.c * material.frob2(dC)
    return float(np.sum(w * d2)), float(np.sum(w * np.sqrt(d2)))
