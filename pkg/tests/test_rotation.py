import math

import numpy as np
import pytest

from facepose.exceptions import DegenerateMatrixError
from facepose.rotation import (
    EulerAngles,
    PoseVectors,
    RotationMatrix,
    angular_error,
    euler_to_matrix,
    matrix_from_pose_vectors,
    matrix_to_euler,
    nearest_rotation,
    pose_vectors_from_matrix,
    svd3,
    wrap_degrees,
)


def oracle_matrix(yaw_deg, pitch_deg, roll_deg):
    """Independent composition oracle: explicit per-axis matrices multiplied out."""
    y, p, r = map(math.radians, (yaw_deg, pitch_deg, roll_deg))
    about_third = np.array(
        [
            [math.cos(y), -math.sin(y), 0.0],
            [math.sin(y), math.cos(y), 0.0],
            [0.0, 0.0, 1.0],
        ]
    )
    about_second = np.array(
        [
            [math.cos(p), 0.0, math.sin(p)],
            [0.0, 1.0, 0.0],
            [-math.sin(p), 0.0, math.cos(p)],
        ]
    )
    about_first = np.array(
        [
            [1.0, 0.0, 0.0],
            [0.0, math.cos(r), -math.sin(r)],
            [0.0, math.sin(r), math.cos(r)],
        ]
    )
    return about_third @ about_second @ about_first


def sample_rotations(rng, n):
    """Uniform random proper rotations via normalized quaternions."""
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    rots = np.empty((n, 3, 3))
    rots[:, 0, 0] = 1 - 2 * (y * y + z * z)
    rots[:, 0, 1] = 2 * (x * y - w * z)
    rots[:, 0, 2] = 2 * (x * z + w * y)
    rots[:, 1, 0] = 2 * (x * y + w * z)
    rots[:, 1, 1] = 1 - 2 * (x * x + z * z)
    rots[:, 1, 2] = 2 * (y * z - w * x)
    rots[:, 2, 0] = 2 * (x * z - w * y)
    rots[:, 2, 1] = 2 * (y * z + w * x)
    rots[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return rots


class TestEulerToMatrix:
    def test_zero_angles_is_identity(self):
        r = euler_to_matrix(EulerAngles(0, 0, 0))
        np.testing.assert_allclose(r.m, np.eye(3), atol=1e-15)

    def test_pure_yaw_90(self):
        r = euler_to_matrix(EulerAngles(90, 0, 0))
        np.testing.assert_allclose(r.m[:, 0], [0, 1, 0], atol=1e-15)
        np.testing.assert_allclose(r.m[:, 1], [-1, 0, 0], atol=1e-15)
        np.testing.assert_allclose(r.m[:, 2], [0, 0, 1], atol=1e-15)
        np.testing.assert_allclose(r.m, oracle_matrix(90, 0, 0), atol=1e-15)

    def test_pure_pitch_90(self):
        r = euler_to_matrix(EulerAngles(0, 90, 0))
        np.testing.assert_allclose(
            r.m, [[0, 0, 1], [0, 1, 0], [-1, 0, 0]], atol=1e-15
        )
        np.testing.assert_allclose(r.m, oracle_matrix(0, 90, 0), atol=1e-15)

    def test_matches_product_oracle_on_random_angles(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            yaw, pitch, roll = rng.uniform(-180, 180, size=3)
            got = euler_to_matrix(EulerAngles(yaw, pitch, roll)).m
            np.testing.assert_allclose(got, oracle_matrix(yaw, pitch, roll), atol=1e-13)

    def test_columns_orthonormal_right_handed(self):
        rng = np.random.default_rng(5)
        for _ in range(500):
            yaw, pitch, roll = rng.uniform(-180, 180, size=3)
            m = euler_to_matrix(EulerAngles(yaw, pitch, roll)).m
            v1, v2, v3 = m[:, 0], m[:, 1], m[:, 2]
            assert abs(v1 @ v2) < 1e-12
            assert abs(v1 @ v3) < 1e-12
            assert abs(v2 @ v3) < 1e-12
            assert abs(np.cross(v1, v2) @ v3 - 1.0) < 1e-9

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            euler_to_matrix(EulerAngles(float("nan"), 0, 0))
        with pytest.raises(ValueError):
            EulerAngles(0, float("inf"), 0)


class TestMatrixToEuler:
    def test_identity(self):
        a = matrix_to_euler(RotationMatrix(np.eye(3)))
        assert a.as_tuple() == (0, 0, 0)

    def test_round_trip_known_angles(self):
        a = matrix_to_euler(euler_to_matrix(EulerAngles(30, 20, 10)))
        np.testing.assert_allclose(a.as_tuple(), (30, 20, 10), atol=1e-9)

    def test_gimbal_lock_rolls_into_yaw(self):
        a = matrix_to_euler(euler_to_matrix(EulerAngles(0, 90, 0)))
        assert a.roll == 0.0
        np.testing.assert_allclose(a.pitch, 90.0, atol=1e-9)
        np.testing.assert_allclose(a.yaw, 0.0, atol=1e-9)

    def test_gimbal_lock_reproduces_matrix(self):
        # At |pitch| = 90 only yaw-roll combinations are observable; the
        # convention fixes roll = 0 but the matrix must round-trip.
        for yaw, pitch, roll in [(25, 90, -40), (100, -90, 30), (-170, 90, 170)]:
            m = euler_to_matrix(EulerAngles(yaw, pitch, roll))
            back = euler_to_matrix(matrix_to_euler(m))
            assert np.linalg.norm(back.m - m.m) < 1e-9
            assert matrix_to_euler(m).roll == 0.0

    def test_round_trip_random(self):
        rng = np.random.default_rng(123)
        for _ in range(2000):
            truth = EulerAngles(
                rng.uniform(-180, 180),
                rng.uniform(-89, 89),
                rng.uniform(-180, 180),
            )
            got = matrix_to_euler(euler_to_matrix(truth))
            for g, t in zip(got.as_tuple(), truth.as_tuple()):
                assert abs(wrap_degrees(g - t)) < 1e-6

    def test_rejects_invalid_matrix(self):
        with pytest.raises(ValueError):
            matrix_to_euler(RotationMatrix(np.eye(3) * 2.0))


class TestPoseVectors:
    def test_identity_columns(self):
        p = pose_vectors_from_matrix(RotationMatrix(np.eye(3)))
        np.testing.assert_array_equal(p.v1, [1, 0, 0])
        np.testing.assert_array_equal(p.v2, [0, 1, 0])
        np.testing.assert_array_equal(p.v3, [0, 0, 1])

    def test_yaw_90_columns(self):
        p = pose_vectors_from_matrix(euler_to_matrix(EulerAngles(90, 0, 0)))
        np.testing.assert_allclose(p.v1, [0, 1, 0], atol=1e-15)
        np.testing.assert_allclose(p.v2, [-1, 0, 0], atol=1e-15)
        np.testing.assert_allclose(p.v3, [0, 0, 1], atol=1e-15)

    def test_matrix_round_trip_exact(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            r = euler_to_matrix(
                EulerAngles(rng.uniform(-180, 180), rng.uniform(-89, 89), rng.uniform(-180, 180))
            )
            back = matrix_from_pose_vectors(pose_vectors_from_matrix(r))
            np.testing.assert_array_equal(back, r.m)

    def test_assembly_examples(self):
        eye = matrix_from_pose_vectors(
            PoseVectors(np.array([1.0, 0, 0]), np.array([0.0, 1, 0]), np.array([0.0, 0, 1]))
        )
        np.testing.assert_array_equal(eye, np.eye(3))
        twice = matrix_from_pose_vectors(
            PoseVectors(np.array([2.0, 0, 0]), np.array([0.0, 2, 0]), np.array([0.0, 0, 2]))
        )
        np.testing.assert_array_equal(twice, 2 * np.eye(3))
        rot = matrix_from_pose_vectors(
            PoseVectors(np.array([0.0, 1, 0]), np.array([-1.0, 0, 0]), np.array([0.0, 0, 1]))
        )
        np.testing.assert_allclose(rot, euler_to_matrix(EulerAngles(90, 0, 0)).m, atol=1e-15)


class TestSvd3:
    def test_identity(self):
        u, s, v = svd3(np.eye(3))
        np.testing.assert_allclose(s, [1, 1, 1], atol=1e-12)
        np.testing.assert_allclose(u @ np.diag(s) @ v.T, np.eye(3), atol=1e-12)

    def test_diagonal(self):
        u, s, v = svd3(np.diag([3.0, 2.0, 1.0]))
        np.testing.assert_allclose(s, [3, 2, 1], atol=1e-12)

    def test_reconstruction_and_eigen_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(500):
            m = rng.standard_normal((3, 3))
            u, s, v = svd3(m)
            assert np.linalg.norm(u @ np.diag(s) @ v.T - m) < 1e-9
            assert np.abs(u.T @ u - np.eye(3)).max() < 1e-9
            assert np.abs(v.T @ v - np.eye(3)).max() < 1e-9
            assert s[0] >= s[1] >= s[2] >= 0
            # independent oracle: singular values are sqrt eigenvalues of M^T M
            eig = np.sqrt(np.maximum(np.linalg.eigvalsh(m.T @ m), 0.0))[::-1]
            np.testing.assert_allclose(s, eig, atol=1e-9)

    def test_rank_deficient(self):
        rng = np.random.default_rng(3)
        for rank in (1, 2):
            for _ in range(200):
                a = rng.standard_normal((3, rank))
                b = rng.standard_normal((rank, 3))
                m = a @ b
                u, s, v = svd3(m)
                assert np.linalg.norm(u @ np.diag(s) @ v.T - m) < 1e-9
                assert np.abs(u.T @ u - np.eye(3)).max() < 1e-9

    def test_zero_matrix(self):
        u, s, v = svd3(np.zeros((3, 3)))
        np.testing.assert_array_equal(s, [0, 0, 0])
        assert np.abs(u.T @ u - np.eye(3)).max() < 1e-12


class TestNearestRotation:
    def test_rotation_is_fixed_point(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            r = euler_to_matrix(
                EulerAngles(rng.uniform(-180, 180), rng.uniform(-89, 89), rng.uniform(-180, 180))
            )
            got = nearest_rotation(r.m)
            assert np.linalg.norm(got.m - r.m) < 1e-12

    def test_scaled_identity(self):
        got = nearest_rotation(2.5 * np.eye(3))
        np.testing.assert_allclose(got.m, np.eye(3), atol=1e-12)

    def test_reflection_projects_to_identity_with_brute_force_oracle(self):
        m = np.diag([1.0, 1.0, -1.0])
        got = nearest_rotation(m)
        np.testing.assert_allclose(got.m, np.eye(3), atol=1e-12)
        # brute force: no sampled proper rotation is closer in Frobenius norm
        rng = np.random.default_rng(99)
        rots = sample_rotations(rng, 1_000_000)
        # ||M - Q||_F^2 = ||M||^2 + 3 - 2 tr(Q^T M); minimizing means maximizing the trace
        traces = np.einsum("nij,ij->n", rots, m)
        best_trace = float(np.einsum("ij,ij->", got.m, m))
        assert best_trace >= traces.max() - 1e-9

    def test_determinant_always_plus_one(self):
        rng = np.random.default_rng(31)
        for _ in range(300):
            m = rng.standard_normal((3, 3))
            if rng.random() < 0.5:
                m[:, 0] *= -1.0  # force det < 0 half the time
            r = nearest_rotation(m)
            assert abs(np.linalg.det(r.m) - 1.0) < 1e-9

    def test_idempotent(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            m = rng.standard_normal((3, 3))
            once = nearest_rotation(m).m
            twice = nearest_rotation(once).m
            assert np.linalg.norm(twice - once) < 1e-12

    def test_optimality_against_sampled_rotations(self):
        rng = np.random.default_rng(21)
        pool = sample_rotations(rng, 10_000)
        for _ in range(100):
            m = rng.standard_normal((3, 3))
            r = nearest_rotation(m).m
            own = float(np.einsum("ij,ij->", r, m))
            sampled = np.einsum("nij,ij->n", pool, m)
            assert own >= sampled.max() - 1e-9

    def test_rank_deficient_rejected(self):
        with pytest.raises(DegenerateMatrixError):
            nearest_rotation(np.outer([1.0, 0, 0], [1.0, 0, 0]))
        with pytest.raises(DegenerateMatrixError):
            nearest_rotation(np.zeros((3, 3)))


class TestAngularError:
    def test_zero_for_equal(self):
        a = EulerAngles(10, 20, 30)
        assert angular_error(a, a) == (0, 0, 0)

    def test_wraparound_seam(self):
        err = angular_error(EulerAngles(179, 0, 0), EulerAngles(-179, 0, 0))
        np.testing.assert_allclose(err, (2, 0, 0), atol=1e-12)

    def test_plain_difference(self):
        err = angular_error(EulerAngles(10, 0, 0), EulerAngles(15, 0, 0))
        np.testing.assert_allclose(err, (5, 0, 0), atol=1e-12)

    def test_range(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            a = EulerAngles(*rng.uniform(-180, 180, 3))
            b = EulerAngles(*rng.uniform(-180, 180, 3))
            for e in angular_error(a, b):
                assert 0.0 <= e <= 180.0


class TestNormalization:
    def test_wrap_degrees(self):
        assert wrap_degrees(180.0) == 180.0
        assert wrap_degrees(-180.0) == 180.0
        assert wrap_degrees(360.0) == 0.0
        assert wrap_degrees(190.0) == -170.0

    def test_pitch_reflection_preserves_rotation(self):
        rng = np.random.default_rng(44)
        for _ in range(200):
            raw = EulerAngles(
                rng.uniform(-360, 360), rng.uniform(-360, 360), rng.uniform(-360, 360)
            )
            canon = raw.normalized()
            assert -180 < canon.yaw <= 180
            assert -90 <= canon.pitch <= 90
            assert -180 < canon.roll <= 180
            diff = euler_to_matrix(raw).m - euler_to_matrix(canon).m
            assert np.linalg.norm(diff) < 1e-9
