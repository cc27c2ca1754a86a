import numpy as np
import pytest

from monohydra.utils.geometry import (
    Pose,
    Twist,
    CameraIntrinsics,
    exp_se3,
    exp_so3,
    log_se3,
    log_so3,
    project,
    project_points,
    backproject,
    backproject_map,
    propagate_points,
    camera_pose,
    right_jacobian_inv_se3,
    R_BC,
    T_BC,
    BehindCameraError,
    InvalidDepthError,
    DegenerateRotationError,
    FrameMismatchError,
)


def _random_twist(rng, max_angle=3.0):
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    return Twist(axis * angle, rng.uniform(-5, 5, 3))


def test_exp_zero_is_identity():
    T = exp_se3(Twist(np.zeros(3), np.zeros(3)))
    assert np.allclose(T.matrix, np.eye(4), atol=0)


def test_quarter_turn_rotates_x_to_y():
    T = exp_se3(Twist([0.0, 0.0, np.pi / 2], np.zeros(3)))
    assert np.allclose(T.transform(np.array([1.0, 0.0, 0.0])), [0.0, 1.0, 0.0], atol=1e-12)


def test_log_identity_and_pure_translation():
    assert np.allclose(log_se3(Pose.identity()).vector, 0.0)
    xi = log_se3(Pose(np.array([0, 0, 0, 1.0]), np.array([1.0, 2.0, 3.0])))
    assert np.allclose(xi.angular, 0.0)
    assert np.allclose(xi.linear, [1.0, 2.0, 3.0])


def test_exp_log_round_trip(rng):
    for _ in range(10000):
        xi = _random_twist(rng)
        back = log_se3(exp_se3(xi)).vector
        assert np.allclose(back, xi.vector, atol=1e-9)


def test_log_exp_round_trip_on_composed_poses(rng):
    for _ in range(200):
        T = exp_se3(_random_twist(rng, 1.4)) @ exp_se3(_random_twist(rng, 1.4))
        R = exp_se3(log_se3(T))
        assert np.allclose(R.matrix, T.matrix, atol=1e-9)


@pytest.mark.parametrize("theta", [5e-9, 1.2e-8, 1e-7, 1e-5, 5e-4, 5e-3])
def test_exp_log_round_trip_at_tiny_angles(theta):
    xi = np.array([theta, 0.0, 0.0, 1.0, 0.5, 0.0])
    back = log_se3(exp_se3(xi)).vector
    assert np.all(np.isfinite(back))
    assert np.allclose(back, xi, rtol=0, atol=1e-12)


def test_right_jacobian_inverse_matches_finite_differences(rng):
    for xi in (np.zeros(6), rng.uniform(-0.05, 0.05, 6), np.array([1e-8, 0, 0, 0.2, 0, 0])):
        eps = 1e-6
        Jr = np.zeros((6, 6))
        base = exp_se3(xi)
        for k in range(6):
            d = np.zeros(6)
            d[k] = eps
            plus = log_se3(base.inverse() @ exp_se3(xi + d)).vector
            minus = log_se3(base.inverse() @ exp_se3(xi - d)).vector
            Jr[:, k] = (plus - minus) / (2 * eps)
        assert np.allclose(right_jacobian_inv_se3(xi) @ Jr, np.eye(6), atol=1e-6)


def test_so3_log_inverts_exp(rng):
    for _ in range(50):
        omega = rng.uniform(-1.5, 1.5, 3)
        assert np.allclose(log_so3(exp_so3(omega)), omega, atol=1e-9)
    assert np.allclose(log_so3(np.eye(3)), 0.0)


def test_log_near_pi_is_degenerate():
    T = Pose.from_yaw(np.pi - 1e-8, np.zeros(3))
    with pytest.raises(DegenerateRotationError):
        log_se3(T)


def test_composition_associative_and_inverse(rng):
    A, B, C = (exp_se3(_random_twist(rng)) for _ in range(3))
    left = ((A @ B) @ C).matrix
    right = (A @ (B @ C)).matrix
    assert np.allclose(left, right, atol=1e-12)
    assert np.allclose((A @ A.inverse()).matrix, np.eye(4), atol=1e-12)


def test_rotation_orthonormal(rng):
    R = exp_se3(_random_twist(rng)).rotation
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)


def test_composition_checks_frames():
    T_WB = Pose.identity("body", "world")
    T_CX = Pose.identity("x", "camera")
    with pytest.raises(FrameMismatchError):
        T_WB @ T_CX
    assert (T_WB @ T_BC).frame_from == "camera"


def test_project_principal_point_camera(principal_camera):
    pixel, z = project(np.array([0.0, 0.0, 2.0]), principal_camera)
    assert np.allclose(pixel, [0.0, 0.0])
    assert z == 2.0


def test_project_behind_camera(principal_camera):
    with pytest.raises(BehindCameraError):
        project(np.array([0.0, 0.0, -1.0]), principal_camera)


def test_backproject_errors_and_simple_case(principal_camera):
    assert np.allclose(backproject(np.array([0.0, 0.0]), 1.0, principal_camera), [0.0, 0.0, 1.0])
    with pytest.raises(InvalidDepthError):
        backproject(np.array([1.0, 1.0]), 0.0, principal_camera)


def test_project_backproject_grid(sim_camera):
    for depth in (0.1, 3.7, 10.0):
        for u in range(0, sim_camera.width, 7):
            for v in range(0, sim_camera.height, 7):
                P = backproject(np.array([u, v], dtype=float), depth, sim_camera)
                pixel, z = project(P, sim_camera)
                assert np.allclose(pixel, [u, v], atol=1e-12)
                assert z == pytest.approx(depth, abs=1e-12)


def test_project_points_matches_single(sim_camera, rng):
    P = np.column_stack([rng.uniform(-1, 1, 20), rng.uniform(-1, 1, 20), rng.uniform(-1, 4, 20)])
    pixels, z, front = project_points(P, sim_camera)
    for k in np.flatnonzero(front):
        assert np.allclose(pixels[k], project(P[k], sim_camera)[0])
    assert np.array_equal(front, P[:, 2] > 0)


def test_backproject_map_marks_invalid(tiny_camera):
    depth = np.full((tiny_camera.height, tiny_camera.width), 2.0)
    depth[0, 0] = 0.0
    points, valid = backproject_map(depth, tiny_camera)
    assert not valid[0, 0] and valid.sum() == depth.size - 1
    assert np.allclose(points[12, 16], [0.0, 0.0, 2.0])


def test_propagate_points_translation(tiny_camera):
    depth = np.full((tiny_camera.height, tiny_camera.width), 3.0)
    pts, valid = propagate_points(depth, tiny_camera, Pose(np.array([0, 0, 0, 1.0]), np.array([0.0, 0.0, -0.5])))
    assert valid.all()
    assert np.allclose(pts[:, 2], 2.5)


def test_camera_axes():
    # 相机 z 轴 (光轴) 对准机体 x 轴
    assert np.allclose(R_BC @ np.array([0.0, 0.0, 1.0]), [1.0, 0.0, 0.0])
    assert np.allclose(T_BC.rotation, R_BC, atol=1e-12)
    T_WC = camera_pose(Pose.from_yaw(np.pi / 2, np.array([1.0, 0.0, 0.0]), "body", "world"))
    assert np.allclose(T_WC.transform(np.array([0.0, 0.0, 2.0])), [1.0, 2.0, 0.0], atol=1e-12)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=0.0, fy=1.0, cx=0.0, cy=0.0, width=1, height=1)
