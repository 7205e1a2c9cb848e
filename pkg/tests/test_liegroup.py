import math

import numpy as np
import pytest
import scipy.linalg
from conftest import poses, random_pose, random_rotation, rotvecs, vec3, vec6
from hypothesis import given

from varpose.liegroup import (
    Pose,
    ad_matrix,
    ad_star,
    adjoint_matrix,
    compose,
    exp_se3,
    exp_so3,
    hat3,
    inverse,
    is_rotation,
    log_se3,
    log_so3,
    orthonormality_error,
    principal_angle,
    principal_angles,
    vee3,
    vee6,
    wedge6,
)


def cross_brute(v, w):
    return np.array([v[1] * w[2] - v[2] * w[1], v[2] * w[0] - v[0] * w[2], v[0] * w[1] - v[1] * w[0]])


def expm_series(X, terms=30):
    out = np.eye(X.shape[0])
    term = np.eye(X.shape[0])
    for k in range(1, terms):
        term = term @ X / k
        out = out + term
    return out


class TestHatVee:
    def test_zero(self):
        assert np.array_equal(hat3([0, 0, 0]), np.zeros((3, 3)))
        assert np.array_equal(vee3(np.zeros((3, 3))), np.zeros(3))

    def test_basis(self):
        assert np.array_equal(hat3([1, 0, 0]), [[0, 0, 0], [0, 0, -1], [0, 1, 0]])

    def test_roundtrip_example(self):
        assert np.array_equal(vee3(hat3([1, 2, 3])), [1, 2, 3])

    def test_rejects_symmetric_part(self):
        S = hat3([1, 2, 3])
        S[0, 1] += 1e-6
        with pytest.raises(ValueError):
            vee3(S)

    @given(vec3, vec3)
    def test_matches_cross_product(self, v, w):
        np.testing.assert_allclose(hat3(v) @ w, cross_brute(v, w), atol=1e-12)
        np.testing.assert_allclose(hat3(v), -hat3(v).T)

    @given(vec3)
    def test_mutual_inverse(self, v):
        np.testing.assert_allclose(vee3(hat3(v)), v, atol=1e-12)
        np.testing.assert_allclose(hat3(vee3(hat3(v))), hat3(v), atol=1e-12)


class TestWedge:
    def test_zero(self):
        assert np.array_equal(wedge6(np.zeros(6)), np.zeros((4, 4)))

    def test_placement(self):
        X = wedge6([0, 0, 1, 1, 0, 0])
        np.testing.assert_array_equal(X[:3, :3], hat3([0, 0, 1]))
        np.testing.assert_array_equal(X[:3, 3], [1, 0, 0])
        np.testing.assert_array_equal(X[3], 0)

    @given(vec6)
    def test_roundtrip(self, xi):
        np.testing.assert_allclose(vee6(wedge6(xi)), xi, atol=1e-12)

    def test_vee6_rejects_bottom_row(self):
        X = wedge6(np.ones(6))
        X[3, 0] = 1.0
        with pytest.raises(ValueError):
            vee6(X)


class TestExpLogSO3:
    def test_zero(self):
        np.testing.assert_array_equal(exp_so3(np.zeros(3)), np.eye(3))
        np.testing.assert_array_equal(log_so3(np.eye(3)), np.zeros(3))

    def test_quarter_pi_about_z(self):
        h = math.sqrt(2) / 2
        expected = np.array([[h, -h, 0], [h, h, 0], [0, 0, 1]])
        np.testing.assert_allclose(exp_so3((math.pi / 4) * np.array([0, 0, 1.0])), expected, atol=1e-15)

    def test_roundtrip_example(self):
        np.testing.assert_allclose(log_so3(exp_so3([0.1, 0.2, 0.3])), [0.1, 0.2, 0.3], atol=1e-14)

    def test_pi_about_x(self):
        R = exp_so3([math.pi, 0, 0])
        w = log_so3(R)
        assert np.linalg.norm(w) == pytest.approx(math.pi)
        np.testing.assert_allclose(np.abs(w), [math.pi, 0, 0], atol=1e-7)
        np.testing.assert_allclose(exp_so3(w), R, atol=1e-9)
        # deterministic representative
        np.testing.assert_array_equal(log_so3(R), w)

    @pytest.mark.parametrize("axis", [[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0], [1, -2, 3]])
    def test_near_pi(self, axis):
        a = np.array(axis, float) / np.linalg.norm(axis)
        for angle in (math.pi, math.pi - 1e-7, math.pi - 1e-4):
            R = exp_so3(angle * a)
            np.testing.assert_allclose(exp_so3(log_so3(R)), R, atol=1e-9)

    def test_small_angle_branch(self):
        w = np.array([3e-9, -1e-9, 2e-9])
        W = hat3(w)
        np.testing.assert_allclose(exp_so3(w), np.eye(3) + W + W @ W / 2, atol=1e-24)
        np.testing.assert_allclose(log_so3(exp_so3(w)), w, rtol=1e-7, atol=1e-22)

    @given(vec3)
    def test_against_expm(self, w):
        np.testing.assert_allclose(exp_so3(w), scipy.linalg.expm(hat3(w)), atol=1e-9)

    @given(vec3)
    def test_inverse_and_rotation(self, w):
        R = exp_so3(w)
        np.testing.assert_allclose(R @ exp_so3(-w), np.eye(3), atol=1e-12)
        assert is_rotation(R, 1e-10)

    @given(rotvecs())
    def test_log_roundtrip(self, w):
        v = log_so3(exp_so3(w))
        assert np.linalg.norm(v) <= math.pi + 1e-12
        np.testing.assert_allclose(v, w, atol=1e-9)


class TestSE3:
    def test_dt_zero_is_identity(self):
        g = exp_se3([1, 2, 3, 4, 5, 6], 0.0)
        np.testing.assert_array_equal(g.R, np.eye(3))
        np.testing.assert_array_equal(g.b, 0)

    def test_pure_translation(self):
        g = exp_se3([0, 0, 0, 1, 2, 3], 1.0)
        np.testing.assert_array_equal(g.R, np.eye(3))
        np.testing.assert_allclose(g.b, [1, 2, 3])

    def test_rejects_non_finite_dt(self):
        with pytest.raises(ValueError):
            exp_se3(np.ones(6), float("nan"))

    @given(vec6, __import__("hypothesis").strategies.floats(-1.0, 1.0))
    def test_against_series(self, xi, dt):
        xi = xi / 5.0
        g = exp_se3(xi, dt)
        np.testing.assert_allclose(g.as_matrix(), expm_series(wedge6(xi * dt), 30), atol=1e-9)

    @given(poses())
    def test_log_roundtrip(self, g):
        h = exp_se3(log_se3(g))
        np.testing.assert_allclose(h.as_matrix(), g.as_matrix(), atol=1e-8)

    def test_compose_inverse(self, rng):
        g = random_pose(rng)
        e = compose(g, inverse(g))
        np.testing.assert_allclose(e.R, np.eye(3), atol=1e-15)
        np.testing.assert_allclose(e.b, 0, atol=1e-14)
        i = inverse(Pose.identity())
        np.testing.assert_array_equal(i.as_matrix(), np.eye(4))

    def test_homogeneous_semantics(self, rng):
        for _ in range(50):
            g1, g2, g3 = (random_pose(rng) for _ in range(3))
            np.testing.assert_allclose((g1 @ g2).as_matrix(), g1.as_matrix() @ g2.as_matrix(), atol=1e-12)
            np.testing.assert_allclose(((g1 @ g2) @ g3).as_matrix(), (g1 @ (g2 @ g3)).as_matrix(), atol=1e-12)
            np.testing.assert_allclose(inverse(g1).as_matrix(), np.linalg.inv(g1.as_matrix()), atol=1e-12)
            assert np.array_equal(g1.as_matrix()[3], [0, 0, 0, 1])

    def test_apply(self, rng):
        g = random_pose(rng)
        p = rng.normal(size=3)
        np.testing.assert_allclose(g.apply(p), (g.as_matrix() @ np.append(p, 1))[:3])

    def test_long_composition_stays_orthonormal(self, rng):
        g = Pose.identity()
        for _ in range(1000):
            g = compose(g, exp_se3(rng.normal(size=6), 0.1))
            assert orthonormality_error(g.R) < 1e-9


class TestAdjoint:
    def test_identity(self):
        np.testing.assert_array_equal(adjoint_matrix(Pose.identity()), np.eye(6))

    def test_translation_block(self):
        A = adjoint_matrix(Pose(np.eye(3), [1, 0, 0]))
        np.testing.assert_array_equal(A[3:, :3], hat3([1, 0, 0]))

    def test_conjugation_oracle(self, rng):
        # g wedge(zeta) g^-1 = wedge(Ad_g zeta)
        for _ in range(20):
            g = random_pose(rng)
            z = rng.normal(size=6)
            T = g.as_matrix()
            np.testing.assert_allclose(wedge6(adjoint_matrix(g) @ z), T @ wedge6(z) @ np.linalg.inv(T), atol=1e-10)

    @given(poses(), poses())
    def test_homomorphism(self, g1, g2):
        np.testing.assert_allclose(adjoint_matrix(g1 @ g2), adjoint_matrix(g1) @ adjoint_matrix(g2), atol=1e-10)

    def test_ad_zero_and_star(self, rng):
        assert np.array_equal(ad_matrix(np.zeros(6)), np.zeros((6, 6)))
        z = rng.normal(size=6)
        np.testing.assert_array_equal(ad_star(z), ad_matrix(z).T)

    def test_ad_is_derivative_of_adjoint(self, rng):
        for _ in range(10):
            z1, z2 = rng.normal(size=6), rng.normal(size=6)
            h = 1e-6
            fd = (adjoint_matrix(exp_se3(z1, h)) @ z2 - adjoint_matrix(exp_se3(z1, -h)) @ z2) / (2 * h)
            np.testing.assert_allclose(ad_matrix(z1) @ z2, fd, atol=1e-6)

    def test_ad_is_matrix_commutator(self, rng):
        z1, z2 = rng.normal(size=6), rng.normal(size=6)
        X, Y = wedge6(z1), wedge6(z2)
        np.testing.assert_allclose(wedge6(ad_matrix(z1) @ z2), X @ Y - Y @ X, atol=1e-12)


class TestPrincipalAngle:
    def test_identity(self):
        assert principal_angle(np.eye(3)) == 0.0

    def test_quarter_pi(self):
        assert principal_angle(exp_so3([0, 0, math.pi / 4])) == pytest.approx(math.pi / 4, abs=1e-15)

    @given(rotvecs(max_angle=math.pi))
    def test_equals_rotation_norm(self, w):
        assert principal_angle(exp_so3(w)) == pytest.approx(np.linalg.norm(w), abs=1e-9)

    def test_matches_arccos_definition(self, rng):
        for _ in range(100):
            Q = random_rotation(rng)
            ref = math.acos(min(1.0, max(-1.0, 0.5 * (np.trace(Q) - 1.0))))
            assert principal_angle(Q) == pytest.approx(ref, abs=1e-7)

    def test_batched(self, rng):
        Qs = np.array([random_rotation(rng) for _ in range(20)])
        np.testing.assert_allclose(principal_angles(Qs), [principal_angle(Q) for Q in Qs], atol=1e-15)


def test_is_rotation_rejects_reflection():
    assert not is_rotation(np.diag([1.0, 1.0, -1.0]))
    assert not is_rotation(np.eye(3) * 1.001)
