"""Shifted SPD solves (K + delta*s*M) z = b via preconditioned CG.

The shift delta is scaled by s = max diagonal of K so its default works
independently of mesh size and material constants.  The contract is the
relative residual bound, not the algorithm; CG with a Jacobi preconditioner
is the baseline and supports warm starts from the previous time step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import SymmetricSparseMatrix


class LinearSolveError(RuntimeError):
    """Non-convergence or detected indefiniteness."""

    def __init__(self, message: str, iterations: int = 0, residual: float = float("nan")):
        self.iterations = iterations
        self.residual = residual
        super().__init__(message)


@dataclass(frozen=True)
class SolverConfig:
    shift_delta: float = 1e-8
    tolerance: float = 1e-10
    max_iterations: int = 20000

    def __post_init__(self):
        if not (self.shift_delta > 0 and self.tolerance > 0 and self.max_iterations > 0):
            raise ValueError("solver config values must be positive")


@dataclass
class SolveResult:
    z: np.ndarray
    iterations: int
    residual: float
    shift: float   # the applied absolute shift delta * s


def solve_spd(K: SymmetricSparseMatrix, M: SymmetricSparseMatrix, b: np.ndarray,
              cfg: SolverConfig = SolverConfig(), x0: np.ndarray | None = None) -> SolveResult:
    """Solve (K + delta*s*M) z = b to ||r|| <= tolerance * ||b||."""
    n = K.dim
    if M.dim != n or b.shape != (n,):
        raise ValueError(f"dimension mismatch: K {K.dim}, M {M.dim}, b {b.shape}")
    if n == 0:
        return SolveResult(z=np.zeros(0), iterations=0, residual=0.0, shift=0.0)

    diag_k = K.diagonal()
    s = float(diag_k.max()) if diag_k.size else 1.0
    if s <= 0:
        s = 1.0
    shift = cfg.shift_delta * s

    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return SolveResult(z=np.zeros(n), iterations=0, residual=0.0, shift=shift)

    # K and M share the assembly pattern, so the shifted operator can be
    # formed by adding data arrays directly
    if (K.mat.indptr is M.mat.indptr or
            (K.mat.indptr.shape == M.mat.indptr.shape
             and np.array_equal(K.mat.indptr, M.mat.indptr)
             and np.array_equal(K.mat.indices, M.mat.indices))):
        A = K.mat.copy()
        A.data = K.mat.data + shift * M.mat.data
    else:
        A = (K.mat + shift * M.mat).tocsr()

    diag = A.diagonal()
    if np.any(diag <= 0):
        raise LinearSolveError("operator has non-positive diagonal; not SPD")
    inv_diag = 1.0 / diag

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    r = b - A @ x
    tol_abs = cfg.tolerance * bnorm
    rnorm = float(np.linalg.norm(r))
    if rnorm <= tol_abs:
        return SolveResult(z=x, iterations=0, residual=rnorm, shift=shift)

    h = inv_diag * r
    p = h.copy()
    rho = float(r @ h)
    for it in range(1, cfg.max_iterations + 1):
        Ap = A @ p
        curv = float(p @ Ap)
        if curv <= 0.0:
            raise LinearSolveError(
                f"negative curvature encountered at iteration {it}; operator not PD",
                iterations=it, residual=rnorm)
        alpha = rho / curv
        x += alpha * p
        r -= alpha * Ap
        rnorm = float(np.linalg.norm(r))
        if rnorm <= tol_abs:
            return SolveResult(z=x, iterations=it, residual=rnorm, shift=shift)
        h = inv_diag * r
        rho_new = float(r @ h)
        p = h + (rho_new / rho) * p
        rho = rho_new
    raise LinearSolveError(
        f"CG did not reach tolerance {cfg.tolerance:g} in {cfg.max_iterations} iterations "
        f"(residual {rnorm / bnorm:.3e} relative)",
        iterations=cfg.max_iterations, residual=rnorm)
