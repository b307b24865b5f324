from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.optimize

from viscofem import (MaterialParams, check_R_frame_indifference, dissipation_R,
                      dissipation_distance, energy_W, fY_min_value, fY_minimizer,
                      power_density_fY, stress_PK1, stress_PK2)
from viscofem.material import frob2, sym

from conftest import random_gl_plus, random_rotation, random_skew


def test_energy_reference_state(unit_params):
    assert energy_W(np.eye(3), unit_params) == 0.0


def test_energy_uniaxial_stretch(unit_params):
    F = np.diag([1.2, 1.0, 1.0])
    expected = 0.5 * (1.2 ** 2 + 2.0 - 3.0 - 2.0 * math.log(1.2)) + 0.5 * (1.2 - 1.0) ** 2
    assert energy_W(F, unit_params) == pytest.approx(expected, rel=1e-12)
    assert energy_W(F, unit_params) == pytest.approx(0.05768, abs=5e-6)


def test_energy_frame_indifference(unit_params):
    rng = np.random.default_rng(10)
    for _ in range(100):
        F = random_gl_plus(rng)
        Q = random_rotation(rng)
        w1, w2 = energy_W(F, unit_params), energy_W(Q @ F, unit_params)
        assert abs(w1 - w2) <= 1e-12 * (1.0 + abs(w1))


def test_energy_infinite_sentinel(unit_params):
    F = np.diag([-1.0, 1.0, 1.0])
    w = energy_W(F, unit_params)
    assert np.isinf(w)
    batch = np.stack([np.eye(3), F])
    wb = energy_W(batch, unit_params)
    assert np.isfinite(wb[0]) and np.isinf(wb[1])


def test_pk1_zero_at_identity(unit_params):
    assert np.abs(stress_PK1(np.eye(3), unit_params)).max() == 0.0


def test_pk1_closed_form_example():
    p = MaterialParams(mu=1.0, lam=0.0, c=1.0)
    P = stress_PK1(np.diag([2.0, 1.0, 1.0]), p)
    assert np.allclose(P, np.diag([1.5, 0.0, 0.0]), atol=1e-14)


def test_pk1_matches_finite_differences(unit_params):
    rng = np.random.default_rng(11)
    h = 1e-5
    for _ in range(100):
        F = random_gl_plus(rng)
        P = stress_PK1(F, unit_params)
        fd = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                Fp, Fm = F.copy(), F.copy()
                Fp[i, j] += h
                Fm[i, j] -= h
                fd[i, j] = (energy_W(Fp, unit_params) - energy_W(Fm, unit_params)) / (2 * h)
        assert np.abs(P - fd).max() <= 1e-6 * (1.0 + np.abs(P).max())


def test_pk1_rejects_noninvertible(unit_params):
    with pytest.raises(ValueError, match="det"):
        stress_PK1(np.diag([0.0, 1.0, 1.0]), unit_params)


def test_pk2_symmetry_and_example(unit_params):
    p = MaterialParams(mu=1.0, lam=0.0, c=1.0)
    S = stress_PK2(np.diag([2.0, 1.0, 1.0]), p)
    assert np.allclose(S, np.diag([0.75, 0.0, 0.0]), atol=1e-14)
    assert np.abs(stress_PK2(np.eye(3), unit_params)).max() == 0.0

    rng = np.random.default_rng(12)
    for _ in range(100):
        S = stress_PK2(random_gl_plus(rng), unit_params)
        assert np.linalg.norm(S - S.T) <= 1e-12 * (1.0 + np.linalg.norm(S))


def test_dissipation_distance_basics(unit_params):
    rng = np.random.default_rng(13)
    F = random_gl_plus(rng)
    assert dissipation_distance(F, F, unit_params) == 0.0
    d = dissipation_distance(np.eye(3), np.diag([1.2, 1.0, 1.0]), unit_params)
    assert d == pytest.approx(1.2 ** 2 - 1.0, rel=1e-13)  # = 0.44
    Q = random_rotation(rng)
    G = random_gl_plus(rng)
    assert dissipation_distance(Q @ F, G, unit_params) == pytest.approx(
        dissipation_distance(F, G, unit_params), rel=1e-12)


def test_dissipation_distance_c_scaling():
    p = MaterialParams(mu=1.0, lam=1.0, c=4.0)
    d = dissipation_distance(np.eye(3), np.diag([1.2, 1.0, 1.0]), p)
    assert d == pytest.approx(2.0 * 0.44, rel=1e-13)  # sqrt(c) scaling


def test_dissipation_rate_examples(unit_params):
    rng = np.random.default_rng(14)
    A = random_skew(rng)
    assert dissipation_R(np.eye(3), A, unit_params) <= 1e-28
    e11 = np.outer([1.0, 0, 0], [1.0, 0, 0])
    assert dissipation_R(np.eye(3), e11, unit_params) == pytest.approx(2.0, rel=1e-14)


def test_rate_is_distance_limit(unit_params):
    # R(F, Fdot) = lim D^2(F + eps Fdot, F) / (2 eps^2), error O(eps)
    rng = np.random.default_rng(15)
    for _ in range(10):
        F = random_gl_plus(rng)
        Fdot = rng.standard_normal((3, 3))
        R = dissipation_R(F, Fdot, unit_params)
        errs = []
        for eps in (1e-2, 1e-3, 1e-4):
            approx = dissipation_distance(F + eps * Fdot, F, unit_params) ** 2 / (2 * eps ** 2)
            errs.append(abs(approx - R))
        assert errs[0] > errs[1] > errs[2]
        # linear decay in eps: each decade shrinks the error about tenfold
        assert 4.0 < errs[0] / errs[1] < 25.0
        assert 4.0 < errs[1] / errs[2] < 25.0


def test_power_density_skew_at_identity(unit_params):
    A = random_skew(np.random.default_rng(16))
    assert abs(power_density_fY(np.eye(3), A, unit_params)) <= 1e-28


def test_power_density_minimum_matches_descent(unit_params):
    # numerical minimization over Z must reach the analytic minimum
    rng = np.random.default_rng(17)
    for _ in range(5):
        Y = random_gl_plus(rng)
        target = fY_min_value(Y, unit_params)

        def fun(zvec):
            return power_density_fY(Y, zvec.reshape(3, 3), unit_params)

        best = min(scipy.optimize.minimize(fun, 0.1 * rng.standard_normal(9),
                                           method="BFGS",
                                           options={"gtol": 1e-12, "maxiter": 1000}).fun
                   for _ in range(2))
        assert best == pytest.approx(target, rel=1e-6, abs=1e-12)


def test_power_density_skew_shift_invariance(unit_params):
    rng = np.random.default_rng(18)
    Y = random_gl_plus(rng)
    Z = rng.standard_normal((3, 3))
    A = random_skew(rng)
    shifted = Z + np.linalg.inv(Y).T @ A
    v1 = power_density_fY(Y, Z, unit_params)
    v2 = power_density_fY(Y, shifted, unit_params)
    assert abs(v1 - v2) <= 1e-10 * (1.0 + abs(v1))


def test_power_density_lower_bound(unit_params):
    rng = np.random.default_rng(19)
    Y = random_gl_plus(rng)
    floor = fY_min_value(Y, unit_params)
    Z = rng.standard_normal((1000, 3, 3))
    vals = power_density_fY(Y, Z, unit_params)
    assert np.all(vals >= floor - 1e-12 * (1.0 + abs(floor)))


def test_minimizer_canonical_representative(unit_params):
    rng = np.random.default_rng(20)
    assert np.abs(fY_minimizer(np.eye(3), unit_params)).max() == 0.0
    for _ in range(10):
        Y = random_gl_plus(rng)
        Z = fY_minimizer(Y, unit_params)
        val = power_density_fY(Y, Z, unit_params)
        target = fY_min_value(Y, unit_params)
        assert abs(val - target) <= 1e-10 * (1.0 + abs(target))
        A = random_skew(rng)
        val2 = power_density_fY(Y, Z + np.linalg.inv(Y).T @ A, unit_params)
        assert abs(val2 - target) <= 1e-9 * (1.0 + abs(target))


def test_minimizer_scales_inversely_with_c():
    Y = np.diag([1.2, 1.0, 1.0])
    z1 = fY_minimizer(Y, MaterialParams(mu=1.0, lam=1.0, c=1.0))
    z4 = fY_minimizer(Y, MaterialParams(mu=1.0, lam=1.0, c=4.0))
    assert np.allclose(z1, 4.0 * z4, rtol=1e-13)


def test_rate_frame_indifference(unit_params):
    rng = np.random.default_rng(21)
    F = random_gl_plus(rng)
    Fdot = rng.standard_normal((3, 3))
    assert check_R_frame_indifference(F, Fdot, np.eye(3), np.zeros((3, 3)), unit_params)
    for _ in range(20):
        Q = random_rotation(rng)
        A = random_skew(rng)
        assert check_R_frame_indifference(random_gl_plus(rng),
                                          rng.standard_normal((3, 3)), Q, A, unit_params)


def test_rate_frame_indifference_precondition():
    p = MaterialParams(mu=1.0, lam=1.0, c=1.0)
    sym_nonzero = np.eye(3)
    with pytest.raises(ValueError, match="skew"):
        check_R_frame_indifference(np.eye(3), np.eye(3), np.eye(3), sym_nonzero, p)
    with pytest.raises(ValueError, match="rotation"):
        check_R_frame_indifference(np.eye(3), np.eye(3), 2.0 * np.eye(3),
                                   np.zeros((3, 3)), p)


def test_quadratic_growth(unit_params):
    # W(F) >= (mu/2)|F|^2 - C0 with an explicit constant: quadratic coercivity
    p = unit_params
    res = scipy.optimize.minimize_scalar(
        lambda J: -p.mu * math.log(J) + 0.5 * p.lam * (J - 1.0) ** 2,
        bounds=(1e-6, 50.0), method="bounded")
    C0 = 1.5 * p.mu + max(0.0, -res.fun) + 1e-9
    rng = np.random.default_rng(22)
    for _ in range(500):
        scale = rng.uniform(0.3, 5.0)
        F = scale * random_gl_plus(rng)
        if np.linalg.det(F) <= 0:
            continue
        assert energy_W(F, p) >= 0.5 * p.mu * frob2(F) - C0


def test_params_validation():
    with pytest.raises(ValueError):
        MaterialParams(mu=0.0, lam=1.0, c=1.0)
    with pytest.raises(ValueError):
        MaterialParams(mu=1.0, lam=-1.0, c=1.0)
    with pytest.raises(ValueError):
        MaterialParams(mu=1.0, lam=1.0, c=0.0)
