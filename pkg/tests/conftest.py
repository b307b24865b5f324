from __future__ import annotations

import numpy as np
import pytest

from viscofem import BoxSpec, MaterialParams, build_box_mesh
from viscofem.fem import P2Space


@pytest.fixture(scope="session")
def cube2_space():
    """2x2x2 cube mesh of (-1,1)^3: 48 tets, 375 dofs."""
    return P2Space(build_box_mesh(BoxSpec((-1, -1, -1), (1, 1, 1), (2, 2, 2))))


@pytest.fixture(scope="session")
def cube3_space():
    """3x3x3 cube mesh of (-1,1)^3."""
    return P2Space(build_box_mesh(BoxSpec((-1, -1, -1), (1, 1, 1), (3, 3, 3))))


@pytest.fixture(scope="session")
def params():
    """The stiff rubber-like parameter set used by the experiments."""
    return MaterialParams(mu=1.0e3, lam=1.5e3, c=3.0e3)


@pytest.fixture(scope="session")
def unit_params():
    return MaterialParams(mu=1.0, lam=1.0, c=1.0)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_gl_plus(rng: np.random.Generator, det_lo=0.5, det_hi=2.0) -> np.ndarray:
    """Random 3x3 matrix with determinant in [det_lo, det_hi]."""
    while True:
        F = np.eye(3) + 0.4 * rng.standard_normal((3, 3))
        d = np.linalg.det(F)
        if det_lo <= d <= det_hi:
            return F


def random_skew(rng: np.random.Generator) -> np.ndarray:
    A = rng.standard_normal((3, 3))
    return A - A.T
