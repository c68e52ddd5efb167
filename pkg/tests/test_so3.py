"""Rotation math against independent oracles.

The axis-angle oracle builds rotations via Rodrigues' formula, entirely
separately from the Euler chain under test.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from gazeshift import so3
from gazeshift.so3 import EyePose, HeadPose, compose_target_pose


def rodrigues(axis, angle: float) -> np.ndarray:
    """Axis-angle rotation matrix, independent of the code under test."""
    u = np.asarray(axis, dtype=float)
    u = u / np.linalg.norm(u)
    K = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * (K @ K)


def zyx_oracle(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Intrinsic Z-Y-X via three independent single-axis rotations."""
    return rodrigues([0, 0, 1], yaw) @ rodrigues([0, 1, 0], pitch) @ rodrigues([1, 0, 0], roll)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    axis = rng.normal(size=3)
    angle = rng.uniform(0, math.pi)
    return rodrigues(axis, angle)


# -- pose types ----------------------------------------------------------------

def test_eye_pose_fields():
    p = EyePose(0.1, -0.2)
    assert p.yaw == 0.1 and p.pitch == -0.2
    np.testing.assert_array_equal(p.as_angles(), [0.1, -0.2, 0.0])


def test_head_pose_fields():
    p = HeadPose(0.1, -0.2, 0.05)
    assert (p.yaw, p.pitch, p.roll) == (0.1, -0.2, 0.05)


@pytest.mark.parametrize("bad", [float("nan"), float("inf")])
def test_pose_rejects_non_finite(bad):
    with pytest.raises(ValueError):
        EyePose(bad, 0.0)
    with pytest.raises(ValueError):
        HeadPose(0.0, bad, 0.0)


def test_wrap_angle_range():
    assert so3.wrap_angle(3.5) == pytest.approx(3.5 - 2 * math.pi, abs=1e-12)
    assert so3.wrap_angle(math.pi) == math.pi  # boundary belongs to +pi
    assert so3.wrap_angle(-math.pi) == math.pi
    rng = np.random.default_rng(0)
    for a in rng.uniform(-20, 20, size=200):
        w = so3.wrap_angle(float(a))
        assert -math.pi < w <= math.pi
        # same point on the circle
        assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-12)
        assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-12)


# -- euler_to_matrix -----------------------------------------------------------

def test_euler_identity():
    np.testing.assert_allclose(so3.euler_to_matrix(HeadPose(0, 0, 0)), np.eye(3), atol=1e-15)


def test_euler_half_turn_about_z():
    R = so3.euler_to_matrix(HeadPose(math.pi, 0, 0))
    np.testing.assert_allclose(R, np.diag([-1.0, -1.0, 1.0]), atol=1e-12)


def test_euler_orthogonality():
    R = so3.euler_to_matrix(HeadPose(0.3, -0.2, 0.1))
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_eye_pose_promotes_with_zero_roll():
    e = so3.euler_to_matrix(EyePose(0.3, -0.2))
    h = so3.euler_to_matrix(HeadPose(0.3, -0.2, 0.0))
    np.testing.assert_allclose(e, h, atol=1e-15)


def test_euler_intrinsic_zyx_order():
    rng = np.random.default_rng(1)
    for _ in range(50):
        yaw, pitch, roll = rng.uniform(-math.pi, math.pi, size=3)
        np.testing.assert_allclose(
            so3.euler_to_matrix(HeadPose(yaw, pitch, roll)),
            zyx_oracle(yaw, pitch, roll), atol=1e-12)


def test_euler_rejects_non_pose():
    with pytest.raises(ValueError):
        so3.euler_to_matrix((0.1, 0.2, 0.3))


# -- compose_target_pose -------------------------------------------------------

def test_compose_zero_increment():
    p = compose_target_pose(EyePose(0.1, 0.2), EyePose(0.0, 0.0))
    assert (p.yaw, p.pitch) == (0.1, 0.2)


def test_compose_wraps():
    p = compose_target_pose(HeadPose(3.0, 0, 0), HeadPose(0.5, 0, 0))
    assert p.yaw == pytest.approx(3.5 - 2 * math.pi, abs=1e-12)
    assert p.yaw == pytest.approx(-2.7832, abs=5e-5)


def test_compose_cancellation():
    p = compose_target_pose(HeadPose(0.2, -0.1, 0.0), HeadPose(-0.2, 0.1, 0.0))
    assert (p.yaw, p.pitch, p.roll) == (0.0, 0.0, 0.0)


def test_compose_rejects_kind_mixing():
    with pytest.raises(ValueError):
        compose_target_pose(EyePose(0.1, 0.0), HeadPose(0.1, 0.0, 0.0))


def test_compose_then_matrix_round_trip():
    # wrapping never changes the rotation the angles denote
    rng = np.random.default_rng(2)
    for _ in range(50):
        theta = rng.uniform(-3.0, 3.0, size=3)
        delta = rng.uniform(-3.0, 3.0, size=3)
        composed = compose_target_pose(HeadPose(*theta), HeadPose(*delta))
        np.testing.assert_allclose(
            so3.euler_to_matrix(composed),
            zyx_oracle(*(theta + delta)), atol=1e-12)


# -- geodesic distance ---------------------------------------------------------

def test_geodesic_identical():
    R = so3.euler_to_matrix(HeadPose(0.3, 0.1, -0.2))
    assert so3.geodesic_distance(R, R) == pytest.approx(0.0, abs=1e-9)


def test_geodesic_antipodal():
    R = so3.euler_to_matrix(HeadPose(math.pi, 0, 0))
    assert so3.geodesic_distance(np.eye(3), R) == pytest.approx(math.pi, abs=1e-12)


def test_geodesic_same_axis():
    a = so3.euler_to_matrix(HeadPose(math.radians(10), 0, 0))
    b = so3.euler_to_matrix(HeadPose(math.radians(40), 0, 0))
    assert so3.geodesic_distance(a, b) == pytest.approx(0.523599, abs=1e-6)


def test_geodesic_rejects_non_rotation():
    with pytest.raises(ValueError):
        so3.geodesic_distance(np.eye(3) * 1.1, np.eye(3))
    with pytest.raises(ValueError):
        so3.geodesic_distance(np.eye(3), np.full((3, 3), np.nan))


def test_geodesic_symmetry_exact():
    rng = np.random.default_rng(3)
    for _ in range(100):
        a, b = random_rotation(rng), random_rotation(rng)
        assert so3.geodesic_distance(a, b) == so3.geodesic_distance(b, a)


def test_geodesic_left_invariance():
    rng = np.random.default_rng(4)
    for _ in range(200):
        a, b, q = random_rotation(rng), random_rotation(rng), random_rotation(rng)
        assert so3.geodesic_distance(q @ a, q @ b) == pytest.approx(
            so3.geodesic_distance(a, b), abs=1e-9)


def test_geodesic_axis_angle_agreement():
    rng = np.random.default_rng(5)
    for _ in range(300):
        axis = rng.normal(size=3)
        angle = rng.uniform(0, math.pi)
        assert so3.geodesic_distance(np.eye(3), rodrigues(axis, angle)) == pytest.approx(
            angle, abs=1e-9)


def test_geodesic_rows_matches_scalar():
    rng = np.random.default_rng(6)
    A = np.stack([random_rotation(rng) for _ in range(16)])
    B = np.stack([random_rotation(rng) for _ in range(16)])
    rows = so3.geodesic_rows(A, B)
    for i in range(16):
        assert rows[i] == pytest.approx(so3.geodesic_distance(A[i], B[i]), abs=1e-12)


# -- batched rotations and the guarded gradient ---------------------------------

def test_rotation_zyx_matches_oracle():
    rng = np.random.default_rng(7)
    angles = rng.uniform(-math.pi, math.pi, size=(32, 3))
    R = so3.rotation_zyx(angles)
    assert R.shape == (32, 3, 3)
    for i in range(32):
        np.testing.assert_allclose(R[i], zyx_oracle(*angles[i]), atol=1e-12)


def test_rotation_zyx_derivs_match_fd():
    rng = np.random.default_rng(8)
    h = 1e-6
    for _ in range(10):
        angles = rng.uniform(-1.2, 1.2, size=3)
        derivs = so3.rotation_zyx_derivs(angles)
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = h
            fd = (so3.rotation_zyx(angles + step) - so3.rotation_zyx(angles - step)) / (2 * h)
            np.testing.assert_allclose(derivs[axis], fd, atol=1e-7)


def test_geodesic_grad_matches_fd_away_from_kinks():
    rng = np.random.default_rng(9)
    h = 1e-6
    for _ in range(20):
        angles = rng.uniform(-1.0, 1.0, size=3)
        ref = so3.rotation_zyx(rng.uniform(-1.0, 1.0, size=3))
        dist, grad = so3.geodesic_to_reference_with_grad(angles, ref)
        if dist < 0.1 or dist > math.pi - 0.1:
            continue  # stay clear of the metric's non-differentiable ends
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = h
            dp, _ = so3.geodesic_to_reference_with_grad(angles + step, ref)
            dm, _ = so3.geodesic_to_reference_with_grad(angles - step, ref)
            fd = (dp - dm) / (2 * h)
            assert grad[axis] == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_geodesic_grad_finite_at_zero_distance():
    # the exact arccos derivative diverges where the two rotations agree;
    # the guard must keep the reported gradient finite
    angles = np.array([0.3, -0.2, 0.1])
    ref = so3.rotation_zyx(angles)
    dist, grad = so3.geodesic_to_reference_with_grad(angles, ref)
    assert dist == pytest.approx(0.0, abs=1e-9)
    assert np.all(np.isfinite(grad))
    assert np.max(np.abs(grad)) <= so3.GRAD_CAP


def test_geodesic_grad_cap_bounds_arccos_derivative():
    # at u = (tr-1)/2 clipped to 1, denominator is floored at 1/GRAD_CAP
    angles = np.zeros(3)
    dist, grad = so3.geodesic_to_reference_with_grad(angles, np.eye(3), grad_cap=10.0)
    assert np.all(np.abs(grad) <= 10.0 * 1.0 + 1e-12)
