"""Pointwise constitutive laws for a viscous Neo-Hookean solid.

Stored energy:  W(F) = mu/2 (|F|^2 - 3 - 2 log det F) + lam/2 (det F - 1)^2.
Dissipation distance between strain states: D(F, G) = sqrt(c) |F^T F - G^T G|,
whose induced rate potential is R(F, Fdot) = 2 c |sym(F^T Fdot)|^2.  With this
scaling R(F, Fdot) = lim_{eps->0} D^2(F + eps Fdot, F) / (2 eps^2) holds
exactly, and the per-step velocity system carries a single factor c.

All operations accept batched inputs with shape (..., 3, 3).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MaterialParams:
    """Lame constants and viscosity scale."""

    mu: float
    lam: float
    c: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")


def det3(F: np.ndarray) -> np.ndarray:
    """Determinants of stacked 3x3 matrices (closed form, no LAPACK loop)."""
    a = F[..., 0, 0] * (F[..., 1, 1] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 1])
    b = F[..., 0, 1] * (F[..., 1, 0] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 0])
    c = F[..., 0, 2] * (F[..., 1, 0] * F[..., 2, 1] - F[..., 1, 1] * F[..., 2, 0])
    return a - b + c


def inv3(F: np.ndarray, det: np.ndarray | None = None) -> np.ndarray:
    """Inverses of stacked 3x3 matrices via the adjugate."""
    if det is None:
        det = det3(F)
    adj = np.empty_like(F)
    adj[..., 0, 0] = F[..., 1, 1] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 1]
    adj[..., 0, 1] = F[..., 0, 2] * F[..., 2, 1] - F[..., 0, 1] * F[..., 2, 2]
    adj[..., 0, 2] = F[..., 0, 1] * F[..., 1, 2] - F[..., 0, 2] * F[..., 1, 1]
    adj[..., 1, 0] = F[..., 1, 2] * F[..., 2, 0] - F[..., 1, 0] * F[..., 2, 2]
    adj[..., 1, 1] = F[..., 0, 0] * F[..., 2, 2] - F[..., 0, 2] * F[..., 2, 0]
    adj[..., 1, 2] = F[..., 0, 2] * F[..., 1, 0] - F[..., 0, 0] * F[..., 1, 2]
    adj[..., 2, 0] = F[..., 1, 0] * F[..., 2, 1] - F[..., 1, 1] * F[..., 2, 0]
    adj[..., 2, 1] = F[..., 0, 1] * F[..., 2, 0] - F[..., 0, 0] * F[..., 2, 1]
    adj[..., 2, 2] = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    return adj / det[..., None, None]


def sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def frob2(M: np.ndarray) -> np.ndarray:
    """Squared Frobenius norm over the last two axes."""
    return np.einsum("...ij,...ij->...", M, M)


def energy_W(F: np.ndarray, p: MaterialParams) -> np.ndarray:
    """Stored energy density; +inf where det F <= 0 (queryable via isinf)."""
    F = np.asarray(F, dtype=float)
    J = det3(F)
    out = np.full(J.shape, np.inf)
    ok = J > 0
    if np.any(ok):
        Fok = F[ok] if F.ndim > 2 else F
        Jok = J[ok] if F.ndim > 2 else J
        w = 0.5 * p.mu * (frob2(Fok) - 3.0 - 2.0 * np.log(Jok)) \
            + 0.5 * p.lam * (Jok - 1.0) ** 2
        if F.ndim > 2:
            out[ok] = w
        else:
            out = np.asarray(w)
    return out if out.ndim else float(out)


def _require_invertible(J, what="F"):
    if np.any(J <= 0):
        raise ValueError(f"det {what} <= 0: deformation gradient not invertible")


def stress_PK1(F: np.ndarray, p: MaterialParams) -> np.ndarray:
    """First Piola-Kirchhoff stress mu (F - F^-T) + lam (J-1) J F^-T."""
    F = np.asarray(F, dtype=float)
    J = det3(F)
    _require_invertible(J)
    FinvT = np.swapaxes(inv3(F, J), -1, -2)
    return p.mu * (F - FinvT) + (p.lam * (J - 1.0) * J)[..., None, None] * FinvT


def stress_PK2(F: np.ndarray, p: MaterialParams) -> np.ndarray:
    """Second Piola-Kirchhoff stress F^-1 PK1(F); symmetric."""
    F = np.asarray(F, dtype=float)
    J = det3(F)
    _require_invertible(J)
    Finv = inv3(F, J)
    return Finv @ stress_PK1(F, p)


def dissipation_distance(F: np.ndarray, G: np.ndarray, p: MaterialParams) -> np.ndarray:
    """sqrt(c) |F^T F - G^T G| (Frobenius)."""
    F = np.asarray(F, dtype=float)
    G = np.asarray(G, dtype=float)
    dC = np.swapaxes(F, -1, -2) @ F - np.swapaxes(G, -1, -2) @ G
    return np.sqrt(p.c * frob2(dC))


def dissipation_R(F: np.ndarray, Fdot: np.ndarray, p: MaterialParams) -> np.ndarray:
    """Rate potential 2 c |sym(F^T Fdot)|^2."""
    F = np.asarray(F, dtype=float)
    Fdot = np.asarray(Fdot, dtype=float)
    return 2.0 * p.c * frob2(sym(np.swapaxes(F, -1, -2) @ Fdot))


def power_density_fY(Y: np.ndarray, Z: np.ndarray, p: MaterialParams) -> np.ndarray:
    """Linearized power density PK1(Y):Z + 2 c |sym(Y^T Z)|^2."""
    Y = np.asarray(Y, dtype=float)
    Z = np.asarray(Z, dtype=float)
    lin = np.einsum("...ij,...ij->...", stress_PK1(Y, p), Z)
    return lin + 2.0 * p.c * frob2(sym(np.swapaxes(Y, -1, -2) @ Z))


def fY_min_value(Y: np.ndarray, p: MaterialParams) -> np.ndarray:
    """Analytic minimum of the power density: -(1/8c) |Y^-1 PK1(Y)|^2."""
    return -frob2(stress_PK2(Y, p)) / (8.0 * p.c)


def fY_minimizer(Y: np.ndarray, p: MaterialParams) -> np.ndarray:
    """Canonical minimizer -(1/4c) (Y Y^T)^-1 PK1(Y).

    The full minimizer set adds Y^-T A for skew A; this representative makes
    sym(Y^T Z) = -(1/4c) Y^-1 PK1(Y) with no skew part.
    """
    Y = np.asarray(Y, dtype=float)
    _require_invertible(det3(Y), "Y")
    YYt = Y @ np.swapaxes(Y, -1, -2)
    return -inv3(YYt) @ stress_PK1(Y, p) / (4.0 * p.c)


def check_R_frame_indifference(F, Fdot, Q, A, p: MaterialParams,
                               rel_tol: float = 1e-12) -> bool:
    """True iff R(F, Fdot) == R(QF, Q(Fdot + A F)) to rel_tol.

    Raises if Q is not a rotation, A is not skew, or det F <= 0.
    """
    F = np.asarray(F, dtype=float)
    Fdot = np.asarray(Fdot, dtype=float)
    Q = np.asarray(Q, dtype=float)
    A = np.asarray(A, dtype=float)
    if np.linalg.norm(Q.T @ Q - np.eye(3)) > 1e-10 or abs(np.linalg.det(Q) - 1.0) > 1e-10:
        raise ValueError("Q is not a proper rotation")
    if np.linalg.norm(A + A.T) > 1e-10 * (1.0 + np.linalg.norm(A)):
        raise ValueError("A is not skew-symmetric")
    _require_invertible(det3(F))
    r1 = dissipation_R(F, Fdot, p)
    r2 = dissipation_R(Q @ F, Q @ (Fdot + A @ F), p)
    return bool(abs(r1 - r2) <= rel_tol * (1.0 + abs(r1)))
