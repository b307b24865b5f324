from __future__ import annotations

import numpy as np
import pytest

from viscofem import (LoadSpec, MaterialParams, apply_dirichlet, assemble_mass,
                      assemble_rhs, assemble_stiffness, constrained_dofs,
                      total_elastic_energy)
from viscofem.assembly import (NonInvertibleDeformationError, dissipation_integrals,
                               external_load_vector)
from viscofem.fem import DeformationField

from conftest import random_skew

VOLUME = 8.0  # all fixtures mesh (-1,1)^3


def random_admissible(space, rng, scale=0.03):
    field = DeformationField.identity(space)
    return DeformationField(field.dofs + scale * rng.standard_normal(space.ndofs))


def test_stiffness_symmetric_psd(cube2_space, params):
    rng = np.random.default_rng(30)
    y = random_admissible(cube2_space, rng)
    K = assemble_stiffness(cube2_space, y, params)
    assert np.abs((K.mat - K.mat.T).data).max() <= 1e-12 * np.abs(K.mat.data).max()
    for _ in range(100):
        z = rng.standard_normal(K.dim)
        q = z @ (K.mat @ z)
        assert q >= -1e-10 * K.norm_fro() * (z @ z)


def test_stiffness_annihilates_translations(cube2_space, params):
    y = random_admissible(cube2_space, np.random.default_rng(31))
    K = assemble_stiffness(cube2_space, y, params)
    for comp in range(3):
        z = np.zeros(K.dim)
        z[comp::3] = 1.0
        assert np.abs(K.mat @ z).max() <= 1e-12 * np.abs(K.mat.data).max()


def test_stiffness_kernel_skew_actions(cube2_space, params):
    rng = np.random.default_rng(32)
    for _ in range(5):
        y = random_admissible(cube2_space, rng)
        K = assemble_stiffness(cube2_space, y, params)
        A = random_skew(rng)
        a = rng.standard_normal(3)
        z = (y.positions() @ A.T + a).ravel()
        assert np.linalg.norm(K.mat @ z) <= 1e-10 * K.norm_fro() * np.linalg.norm(z)


def test_stiffness_quadratic_form_closed_form(cube2_space, params):
    # identity configuration, grad z = e1 (x) e1: energy density is 4c
    y = DeformationField.identity(cube2_space)
    K = assemble_stiffness(cube2_space, y, params)
    z = np.zeros(cube2_space.ndofs)
    z[0::3] = cube2_space.nodes[:, 0]
    val = z @ (K.mat @ z)
    assert val == pytest.approx(4.0 * params.c * VOLUME, rel=1e-12)


def test_mass_row_sums_and_pd(cube2_space):
    M = assemble_mass(cube2_space)
    ones = np.zeros(M.dim)
    ones[1::3] = 1.0
    assert ones @ (M.mat @ ones) == pytest.approx(VOLUME, rel=1e-12)
    rng = np.random.default_rng(33)
    for _ in range(20):
        z = rng.standard_normal(M.dim)
        assert z @ (M.mat @ z) > 0.0


def test_rhs_zero_for_stress_free(cube2_space, params):
    y = DeformationField.identity(cube2_space)
    b = assemble_rhs(cube2_space, y, params, None)
    assert np.abs(b).max() <= 1e-10 * params.mu


def test_rhs_constant_body_force(cube2_space, params):
    loads = LoadSpec(body_force=(0.0, 0.0, -2.0e3))
    y = DeformationField.identity(cube2_space)
    b = assemble_rhs(cube2_space, y, params, loads)
    assert b[2::3].sum() == pytest.approx(-2.0e3 * VOLUME, rel=1e-12)
    assert abs(b[0::3].sum()) <= 1e-9
    assert abs(b[1::3].sum()) <= 1e-9


def test_rhs_translation_balance(cube2_space, params):
    # divergence structure: the stress term sums to zero componentwise
    y = random_admissible(cube2_space, np.random.default_rng(34))
    b = assemble_rhs(cube2_space, y, params, None)
    scale = np.abs(b).max()
    for comp in range(3):
        assert abs(b[comp::3].sum()) <= 1e-10 * (1.0 + scale)


def test_rhs_is_negative_energy_gradient(cube2_space, params):
    # -b must match finite differences of the discrete elastic energy
    rng = np.random.default_rng(35)
    y = random_admissible(cube2_space, rng)
    b = assemble_rhs(cube2_space, y, params, None)
    h = 1e-6
    for dof in rng.choice(cube2_space.ndofs, size=12, replace=False):
        dp = y.dofs.copy()
        dm = y.dofs.copy()
        dp[dof] += h
        dm[dof] -= h
        fd = (total_elastic_energy(cube2_space, DeformationField(dp), params)
              - total_elastic_energy(cube2_space, DeformationField(dm), params)) / (2 * h)
        assert fd == pytest.approx(-b[dof], rel=1e-5, abs=1e-5 * (1.0 + abs(fd)))


def test_rhs_traction_total_force(cube2_space, params):
    g = (0.0, 3.0, -1.0)
    loads = LoadSpec(traction={"x+": g})
    y = DeformationField.identity(cube2_space)
    b = assemble_rhs(cube2_space, y, params, loads)
    area = 4.0  # face of (-1,1)^3
    for comp in range(3):
        assert b[comp::3].sum() == pytest.approx(g[comp] * area, rel=1e-12, abs=1e-12)


def test_rhs_reports_noninvertible_point(cube2_space, params):
    y = DeformationField.identity(cube2_space)
    bad = y.dofs.copy()
    bad = bad.reshape(-1, 3)
    bad[:, 0] *= -1.0  # global reflection: det < 0 everywhere
    with pytest.raises(NonInvertibleDeformationError) as err:
        assemble_rhs(cube2_space, DeformationField(bad.ravel()), params, None)
    assert err.value.element >= 0
    assert err.value.point >= 0


def test_apply_dirichlet_all_and_none(cube2_space, params):
    y = DeformationField.identity(cube2_space)
    K = assemble_stiffness(cube2_space, y, params)
    b = np.arange(K.dim, dtype=float)
    red_all = apply_dirichlet(K, b, np.arange(K.dim))
    assert red_all.K.dim == 0 and red_all.b.size == 0
    assert np.all(red_all.expand(np.zeros(0)) == 0.0)
    red_none = apply_dirichlet(K, b, np.empty(0, dtype=int))
    assert red_none.K.dim == K.dim
    assert np.all(red_none.b == b)


def test_apply_dirichlet_reduced_spd(cube2_space, params):
    loads = LoadSpec(dirichlet={"z+": "reference"})
    cons = constrained_dofs(cube2_space, loads)
    y = DeformationField.identity(cube2_space)
    K = assemble_stiffness(cube2_space, y, params)
    red = apply_dirichlet(K, np.zeros(K.dim), cons)
    dense = red.K.toarray()
    assert np.abs(dense - dense.T).max() <= 1e-12 * np.abs(dense).max()
    eigs = np.linalg.eigvalsh(dense)
    assert eigs.min() > 0.0


def test_apply_dirichlet_out_of_range(cube2_space, params):
    y = DeformationField.identity(cube2_space)
    K = assemble_stiffness(cube2_space, y, params)
    with pytest.raises(ValueError, match="range"):
        apply_dirichlet(K, np.zeros(K.dim), [K.dim + 3])


def test_loadspec_unknown_tag(cube2_space):
    loads = LoadSpec(traction={"lid": (0, 0, 1.0)})
    with pytest.raises(ValueError, match="lid"):
        loads.validate_tags(cube2_space.mesh)


def test_dissipation_integrals_zero_and_positive(cube2_space, params):
    y = DeformationField.identity(cube2_space)
    d2, d1 = dissipation_integrals(cube2_space, y, y, params)
    assert d2 == 0.0 and d1 == 0.0
    y2 = DeformationField.affine(cube2_space, np.diag([1.1, 1.0, 1.0]))
    d2, d1 = dissipation_integrals(cube2_space, y2, y, params)
    # spatially constant integrand: int D^2 = c |dC|^2 |Omega|, int D = sqrt of it
    dc2 = (1.1 ** 2 - 1.0) ** 2
    assert d2 == pytest.approx(params.c * dc2 * VOLUME, rel=1e-12)
    assert d1 == pytest.approx(np.sqrt(params.c * dc2) * VOLUME, rel=1e-12)


def test_external_load_vector_matches_rhs_force_terms(cube2_space, params):
    loads = LoadSpec(body_force=(1.0, -2.0, 0.5), traction={"y-": (0.0, 0.0, 2.0)})
    y = DeformationField.identity(cube2_space)
    full = assemble_rhs(cube2_space, y, params, loads)
    stress_only = assemble_rhs(cube2_space, y, params, None)
    forces = external_load_vector(cube2_space, loads)
    assert np.abs(full - stress_only - forces).max() <= 1e-12 * (1.0 + np.abs(forces).max())
