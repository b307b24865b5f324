"""Independent reference solvers used to validate the explicit scheme.

Three validators:

* linear Kelvin-Voigt stepping, explicit and implicit, with full-gradient
  isotropic elasticity/viscosity forms (a sanity model with known behavior);
* the implicit nonlinear minimizing-movement step: damped Newton on
  int W(grad y) - loads + (1/2 tau) int D^2(grad y, grad y_prev), restricted
  to desk-scale meshes where a dense Hessian is affordable.  Newton from the
  previous state deliberately returns a *local* minimizer nearby;
* brute-force numerical minimization of the pointwise linearized power
  density over 3x3 velocity gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize

from . import material
from .assembly import (LoadSpec, SymmetricSparseMatrix, _scatter, apply_dirichlet,
                       assemble_mass, external_load_vector, reduce_matrix)
from .fem import DeformationField, P2Space
from .linsolve import SolverConfig, solve_spd
from .material import MaterialParams

DESK_DOF_LIMIT = 6000


class NewtonError(RuntimeError):
    """Line-search failure or non-convergence of the implicit oracle."""


@dataclass(frozen=True)
class IsotropicTensors:
    """Isotropic elasticity and viscosity acting on full gradients.

    elasticity: C G = 2 mu G + lam tr(G) Id;  viscosity: D G = 2 c G.
    """

    mu: float
    lam: float
    c: float

    def __post_init__(self):
        if not (self.mu > 0 and self.lam >= 0 and self.c > 0):
            raise ValueError("tensors require mu > 0, lam >= 0, c > 0")

    def apply_elastic(self, G: np.ndarray) -> np.ndarray:
        G = np.asarray(G, dtype=float)
        tr = np.trace(G, axis1=-2, axis2=-1)
        return 2.0 * self.mu * G + self.lam * tr[..., None, None] * np.eye(3)

    def apply_viscous(self, G: np.ndarray) -> np.ndarray:
        return 2.0 * self.c * np.asarray(G, dtype=float)


@dataclass(frozen=True)
class NewtonConfig:
    max_iterations: int = 60
    gradient_tolerance: float = 1e-9   # relative to the per-step initial gradient
    backtrack_factor: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 60

    def __post_init__(self):
        if not (self.max_iterations > 0 and self.gradient_tolerance > 0):
            raise ValueError("Newton iteration/tolerance must be positive")
        if not (0.0 < self.backtrack_factor < 1.0 and self.armijo > 0):
            raise ValueError("backtracking factor must lie in (0,1), armijo > 0")


def assemble_elastic_operator(space: P2Space, t: IsotropicTensors) -> SymmetricSparseMatrix:
    """A_C[(ia),(jb)] = int (2 mu delta_ab G_i.G_j + lam G_i[a] G_j[b]) dx."""
    deg = 4
    G = space.gradients(deg)
    w = space.weights(deg)
    GG = np.einsum("eq,eqid,eqjd->eij", w, G, G, optimize=True)
    blocks = np.zeros((space.element_count, 10, 3, 10, 3))
    for a in range(3):
        blocks[:, :, a, :, a] = 2.0 * t.mu * GG
    blocks += t.lam * np.einsum("eq,eqia,eqjb->eiajb", w, G, G, optimize=True)
    return SymmetricSparseMatrix(_scatter(space, blocks.reshape(-1, 30, 30)))


def assemble_viscous_operator(space: P2Space, t: IsotropicTensors) -> SymmetricSparseMatrix:
    """A_D[(ia),(jb)] = int 2 c delta_ab G_i.G_j dx (vector Laplacian form)."""
    deg = 4
    G = space.gradients(deg)
    w = space.weights(deg)
    GG = np.einsum("eq,eqid,eqjd->eij", w, G, G, optimize=True)
    blocks = np.zeros((space.element_count, 10, 3, 10, 3))
    for a in range(3):
        blocks[:, :, a, :, a] = 2.0 * t.c * GG
    return SymmetricSparseMatrix(_scatter(space, blocks.reshape(-1, 30, 30)))


def _linear_ops(space: P2Space, t: IsotropicTensors):
    key = ("linear_ops", t.mu, t.lam, t.c)
    ops = space.cache.get(key)
    if ops is None:
        ops = (assemble_elastic_operator(space, t), assemble_viscous_operator(space, t))
        space.cache[key] = ops
    return ops


def linear_step_implicit(u_prev: np.ndarray, tau: float, t: IsotropicTensors,
                         space: P2Space, constrained,
                         solver: SolverConfig = SolverConfig()) -> np.ndarray:
    """One implicit step: (A_C + A_D/tau) u_k = (A_D/tau) u_prev, u_k = u_prev on the boundary set.

    Solved in increment form w = u_k - u_prev with w = 0 on the constrained
    dofs, which is equivalent and keeps the reduced operator definite.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    A_c, A_d = _linear_ops(space, t)
    rhs = -(A_c.mat @ u_prev)
    lhs = SymmetricSparseMatrix((A_c.mat + A_d.mat / tau).tocsr())
    reduced = apply_dirichlet(lhs, rhs, constrained)
    M_red = reduce_matrix(assemble_mass(space), reduced.free)
    res = solve_spd(reduced.K, M_red, reduced.b, solver)
    return u_prev + reduced.expand(res.z)


def linear_step_explicit(u_prev: np.ndarray, tau: float, t: IsotropicTensors,
                         space: P2Space, constrained,
                         solver: SolverConfig = SolverConfig()) -> np.ndarray:
    """One explicit step: solve A_D v = -A_C u_prev, then u_k = u_prev + tau v."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    A_c, A_d = _linear_ops(space, t)
    rhs = -(A_c.mat @ u_prev)
    reduced = apply_dirichlet(A_d, rhs, constrained)
    M_red = reduce_matrix(assemble_mass(space), reduced.free)
    res = solve_spd(reduced.K, M_red, reduced.b, solver)
    return u_prev + tau * reduced.expand(res.z)


def run_linear(u0: np.ndarray, tau: float, T: float, t: IsotropicTensors,
               space: P2Space, constrained, scheme: str,
               solver: SolverConfig = SolverConfig()) -> np.ndarray:
    """Iterate a linear scheme ('explicit' or 'implicit') until time T."""
    stepper = {"explicit": linear_step_explicit, "implicit": linear_step_implicit}[scheme]
    steps = round(T / tau)
    if abs(T / tau - steps) > 1e-9 * max(1.0, T / tau):
        raise ValueError("T/tau must be an integer")
    u = np.asarray(u0, dtype=float).copy()
    for _ in range(steps):
        u = stepper(u, tau, t, space, constrained, solver)
    return u


def run_linearized_explicit(y0: DeformationField, tau: float, T: float,
                            p: MaterialParams, loads: LoadSpec, constrained,
                            space: P2Space,
                            solver: SolverConfig = SolverConfig()) -> DeformationField:
    """Iterate the production explicit scheme; returns the final deformation."""
    from .stepper import SimulationState, Stepper

    steps = round(T / tau)
    if abs(T / tau - steps) > 1e-9 * max(1.0, T / tau):
        raise ValueError("T/tau must be an integer")
    stepper = Stepper(space, p, loads, solver, constrained=np.asarray(constrained))
    state = SimulationState(y=y0.copy())
    for _ in range(steps):
        state, _report = stepper.step(state, tau)
    return state.y


# ---------------------------------------------------------------------------
# implicit nonlinear minimizing movement (dense Newton, desk meshes only)
# ---------------------------------------------------------------------------

def _increment_value(space, p, tau, loads_vec, dofs, C_prev, w, G):
    y = DeformationField(dofs)
    F = np.einsum("eja,eqjl->eqal", space.element_field(y), G, optimize=True)
    J = material.det3(F)
    if np.any(J <= 0):
        return float("inf")
    W = material.energy_W(F, p)
    C = np.swapaxes(F, -1, -2) @ F
    d2 = p.c * material.frob2(C - C_prev)
    value = float(np.sum(w * (W + d2 / (2.0 * tau))))
    return value - float(loads_vec @ dofs)


def _increment_gradient(space, p, tau, loads_vec, dofs, C_prev, w, G):
    y = DeformationField(dofs)
    F = np.einsum("eja,eqjl->eqal", space.element_field(y), G, optimize=True)
    P = material.stress_PK1(F, p)
    C = np.swapaxes(F, -1, -2) @ F
    visc = (2.0 * p.c / tau) * (F @ (C - C_prev))
    total = P + visc
    g_loc = np.einsum("eq,eqal,eqil->eia", w, total, G, optimize=True)
    g = np.zeros(space.ndofs)
    np.add.at(g, space.element_dofs, g_loc.reshape(-1, 30))
    return g - loads_vec


def _increment_hessian(space, p, tau, dofs, C_prev, w, G):
    """Dense Hessian of the increment functional (elastic + viscous parts)."""
    y = DeformationField(dofs)
    F = np.einsum("eja,eqjl->eqal", space.element_field(y), G, optimize=True)
    J = material.det3(F)
    Finv = material.inv3(F, J)
    C = np.swapaxes(F, -1, -2) @ F
    dC = C - C_prev

    GG = np.einsum("eqid,eqjd->eqij", G, G, optimize=True)
    FF = np.einsum("eqad,eqbd->eqab", F, F, optimize=True)      # f_a . f_b
    GF = np.einsum("eqid,eqbd->eqib", G, F, optimize=True)      # G_i . f_b
    Q = np.einsum("eqil,eqla->eqia", G, Finv, optimize=True)    # G_i . Finv[:,a]

    jm1 = J - 1.0
    # elastic second derivative, term by term:
    #   mu U:V + mu tr(Finv U Finv V)
    # + lam J^2 (Finv^T:U)(Finv^T:V) + lam (J-1) J [(Finv^T:U)(Finv^T:V) - tr(...)]
    c_qq = p.lam * (J * J + jm1 * J)        # coefficient of Q[i,a] Q[j,b]
    c_tr = p.mu - p.lam * jm1 * J           # coefficient of Q[i,b] Q[j,a]
    H = np.einsum("eq,eqij,ab->eiajb", w * p.mu, GG, np.eye(3), optimize=True)
    H += np.einsum("eq,eqia,eqjb->eiajb", w * c_qq, Q, Q, optimize=True)
    H += np.einsum("eq,eqib,eqja->eiajb", w * c_tr, Q, Q, optimize=True)

    # viscous second derivative:
    #   (c/tau) [ 4 sym(F^T U):sym(F^T V) + 2 (C - C_prev) : sym(V^T U) ]
    cv = p.c / tau
    H += np.einsum("eq,eqij,eqab->eiajb", 2.0 * cv * w, GG, FF, optimize=True)
    H += np.einsum("eq,eqib,eqja->eiajb", 2.0 * cv * w, GF, GF, optimize=True)
    dCG = np.einsum("eqlm,eqim->eqil", dC, G, optimize=True)
    H += np.einsum("eq,eqjl,eqil,ab->eiajb", 2.0 * cv * w, G, dCG, np.eye(3),
                   optimize=True)

    n = space.ndofs
    Hfull = np.zeros((n, n))
    ed = space.element_dofs
    Hblocks = H.reshape(-1, 30, 30)
    for e in range(ed.shape[0]):
        idx = ed[e]
        Hfull[np.ix_(idx, idx)] += Hblocks[e]
    return Hfull


def _lumped_masses(space: P2Space) -> np.ndarray:
    key = "lumped_masses"
    m = space.cache.get(key)
    if m is None:
        M = assemble_mass(space)
        m = np.asarray(M.mat.sum(axis=1)).ravel()[0::3]
        space.cache[key] = m
    return m


def _select_least_rigid(space: P2Space, y_prev: DeformationField,
                        dofs: np.ndarray) -> np.ndarray:
    """Pick the minimizer representative closest to y_prev over rigid motions.

    The increment functional is invariant under y -> Q y + a, so its (free
    boundary) minimizers form a 6-parameter orbit; this resolves the gauge by
    mass-weighted Procrustes alignment of the new state to the previous one,
    matching the zero-rigid-velocity gauge of the explicit scheme.
    """
    m = _lumped_masses(space)
    P = dofs.reshape(-1, 3)
    R = y_prev.positions()
    wsum = m.sum()
    pc = (m[:, None] * P).sum(axis=0) / wsum
    rc = (m[:, None] * R).sum(axis=0) / wsum
    H = ((P - pc) * m[:, None]).T @ (R - rc)
    U, _s, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(U @ Vt))
    Q = (U @ np.diag([1.0, 1.0, d]) @ Vt).T
    return ((P - pc) @ Q.T + rc).ravel()


def nonlinear_implicit_step(y_prev: DeformationField, tau: float, p: MaterialParams,
                            loads: LoadSpec, constrained, space: P2Space,
                            cfg: NewtonConfig = NewtonConfig()) -> DeformationField:
    """One implicit minimizing-movement step by damped Newton.

    Finds a local minimizer of the increment functional near y_prev (Armijo
    backtracking; the Hessian gets a Levenberg diagonal shift whenever its
    factorization fails).  Restricted to meshes with at most a few thousand
    dofs since the Hessian is handled densely.

    On free boundaries (no constrained dofs and load-free) the returned
    minimizer is the least-rigid-displacement representative of the orbit of
    minimizers; see :func:`_select_least_rigid`.
    """
    if space.ndofs > DESK_DOF_LIMIT:
        raise ValueError(f"implicit oracle limited to {DESK_DOF_LIMIT} dofs, "
                         f"got {space.ndofs}")
    if tau <= 0:
        raise ValueError("tau must be positive")
    deg = 5
    w = space.weights(deg)
    G = space.gradients(deg)
    F_prev = space.deformation_gradients(y_prev, deg)
    C_prev = np.swapaxes(F_prev, -1, -2) @ F_prev
    loads_vec = external_load_vector(space, loads)

    constrained = np.asarray(constrained, dtype=np.int64)
    mask = np.ones(space.ndofs, dtype=bool)
    mask[constrained] = False
    free = np.flatnonzero(mask)
    gauge_free = constrained.size == 0 and not loads.has_forces

    def finish(result_dofs):
        if gauge_free:
            result_dofs = _select_least_rigid(space, y_prev, result_dofs)
        return DeformationField(result_dofs)

    dofs = y_prev.dofs.copy()
    value = _increment_value(space, p, tau, loads_vec, dofs, C_prev, w, G)
    if not np.isfinite(value):
        raise NewtonError("previous state is not admissible")
    g = _increment_gradient(space, p, tau, loads_vec, dofs, C_prev, w, G)[free]
    gnorm0 = float(np.linalg.norm(g, np.inf))
    tol = cfg.gradient_tolerance * max(1.0, gnorm0)
    if gnorm0 <= tol:
        return y_prev.copy()

    gnorm = gnorm0
    for _ in range(cfg.max_iterations):
        H = _increment_hessian(space, p, tau, dofs, C_prev, w, G)[np.ix_(free, free)]
        base = float(np.abs(np.diag(H)).max())
        # a small always-on floor keeps directions deterministic along the
        # exactly singular rigid-motion kernel of free-boundary problems
        shift = 1e-8 * base
        while True:
            try:
                cho = scipy.linalg.cho_factor(H + shift * np.eye(H.shape[0]),
                                              check_finite=False)
                break
            except np.linalg.LinAlgError:
                shift = 10.0 * shift
                if shift > 1e6 * base:
                    raise NewtonError("could not regularize the Newton Hessian")
        direction = scipy.linalg.cho_solve(cho, -g, check_finite=False)
        slope = float(g @ direction)
        if slope >= 0:
            raise NewtonError("Newton direction is not a descent direction")

        alpha = 1.0
        for _bt in range(cfg.max_backtracks):
            trial = dofs.copy()
            trial[free] += alpha * direction
            trial_value = _increment_value(space, p, tau, loads_vec, trial, C_prev, w, G)
            if trial_value <= value + cfg.armijo * alpha * slope:
                break
            alpha *= cfg.backtrack_factor
        else:
            raise NewtonError("Armijo backtracking failed to find a descent step")

        value_drop = value - trial_value
        dofs, value = trial, trial_value
        g = _increment_gradient(space, p, tau, loads_vec, dofs, C_prev, w, G)[free]
        gnorm_new = float(np.linalg.norm(g, np.inf))
        if gnorm_new <= tol:
            return finish(dofs)
        # stagnation at the floating-point noise floor of the c/tau-scaled
        # gradient: accept once the value no longer moves and the gradient is
        # already reduced by many orders
        if (value_drop <= 8.0 * np.finfo(float).eps * (1.0 + abs(value))
                and gnorm_new <= 1e-6 * max(1.0, gnorm0)
                and gnorm_new >= 0.25 * gnorm):
            return finish(dofs)
        gnorm = gnorm_new
    raise NewtonError(f"Newton did not converge in {cfg.max_iterations} iterations")


def run_nonlinear_implicit(y0: DeformationField, tau: float, T: float,
                           p: MaterialParams, loads: LoadSpec, constrained,
                           space: P2Space,
                           cfg: NewtonConfig = NewtonConfig()) -> DeformationField:
    steps = round(T / tau)
    if abs(T / tau - steps) > 1e-9 * max(1.0, T / tau):
        raise ValueError("T/tau must be an integer")
    y = y0.copy()
    for _ in range(steps):
        y = nonlinear_implicit_step(y, tau, p, loads, constrained, space, cfg)
    return y


# ---------------------------------------------------------------------------
# pointwise brute force
# ---------------------------------------------------------------------------

def brute_force_fY_min(Y: np.ndarray, p: MaterialParams,
                       seed: int = 0) -> tuple[float, np.ndarray]:
    """Numerically minimize Z -> PK1(Y):Z + 2c|sym(Y^T Z)|^2 over 3x3 Z.

    Independent of the closed-form minimum; uses BFGS with the gradient of the
    density itself.  The minimizer is unique only up to Y^-T skew directions,
    so different seeds may return different representatives with equal value.
    """
    Y = np.asarray(Y, dtype=float)
    if material.det3(Y) <= 0:
        raise ValueError("det Y <= 0")
    P = material.stress_PK1(Y, p)

    def fun(zvec):
        Z = zvec.reshape(3, 3)
        return float(np.sum(P * Z) + 2.0 * p.c
                     * material.frob2(material.sym(Y.T @ Z)))

    def jac(zvec):
        Z = zvec.reshape(3, 3)
        return (P + 4.0 * p.c * (Y @ material.sym(Y.T @ Z))).ravel()

    rng = np.random.default_rng(seed)
    x0 = 0.1 * rng.standard_normal(9)
    scale = max(1.0, float(np.linalg.norm(P)))
    res = scipy.optimize.minimize(fun, x0, jac=jac, method="BFGS",
                                  options={"gtol": 1e-12 * scale, "maxiter": 2000})
    if not res.success and float(np.linalg.norm(res.jac, np.inf)) > 1e-8 * scale:
        raise NewtonError(f"brute-force minimization did not converge: {res.message}")
    return float(res.fun), res.x.reshape(3, 3)
