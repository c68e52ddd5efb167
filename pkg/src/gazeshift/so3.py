"""Euler-pose rotation math for eye-head gaze control.

Conventions used throughout the toolkit:

  * Angles are radians. Wrapped angles live in (-pi, pi].
  * Euler composition is intrinsic Z-Y-X (yaw about +z, then pitch about
    the rotated +y, then roll about the twice-rotated +x), so a pose maps
    to the rotation matrix ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
  * The base frame is x forward, y left, z up. Positive yaw turns the
    forward axis left; positive Euler pitch tips it downward.
  * Eye poses have no roll axis; where a full rotation is needed they are
    promoted with roll = 0.

The distance between two rotations is the geodesic angle on SO(3):
``d(R1, R2) = arccos((trace(R1 @ R2.T) - 1) / 2)``, with the trace argument
clamped to [-1, 1] before arccos so floating-point noise near the ends of
the metric cannot produce NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

# Rotation-matrix invariants (orthogonality, unit determinant) are enforced
# to this absolute tolerance before a geodesic distance is computed.
ROTATION_ATOL = 1e-6

# The arccos derivative is unbounded as the geodesic distance approaches
# 0 or pi; training code caps its magnitude here so gradients stay finite.
GRAD_CAP = 1e4


def wrap_angle(angle: float) -> float:
    """Wrap a scalar angle into (-pi, pi]; in-range values pass through exactly."""
    if not math.isfinite(angle):
        raise ValueError(f"cannot wrap non-finite angle {angle!r}")
    if -math.pi < angle <= math.pi:
        return angle
    return math.pi - (math.pi - angle) % TWO_PI


def wrap_angles(angles: np.ndarray) -> np.ndarray:
    """Vectorised :func:`wrap_angle`."""
    angles = np.asarray(angles, dtype=float)
    wrapped = np.pi - (np.pi - angles) % TWO_PI
    return np.where((angles > -np.pi) & (angles <= np.pi), angles, wrapped)


@dataclass(frozen=True)
class EyePose:
    """Coupled two-axis eye orientation (yaw, pitch), radians."""

    yaw: float
    pitch: float

    def __post_init__(self):
        if not (math.isfinite(self.yaw) and math.isfinite(self.pitch)):
            raise ValueError("eye pose angles must be finite")
        if abs(self.yaw) > math.pi + 1e-9 or abs(self.pitch) > math.pi / 2 + 1e-9:
            raise ValueError(
                f"eye pose outside representational range: yaw={self.yaw}, pitch={self.pitch}"
            )

    def as_array(self) -> np.ndarray:
        return np.array([self.yaw, self.pitch])

    def as_angles(self) -> np.ndarray:
        """(yaw, pitch, roll) with the missing roll axis fixed at zero."""
        return np.array([self.yaw, self.pitch, 0.0])


@dataclass(frozen=True)
class HeadPose:
    """Three-axis head orientation (yaw, pitch, roll), radians."""

    yaw: float
    pitch: float
    roll: float

    def __post_init__(self):
        for name in ("yaw", "pitch", "roll"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"head pose {name} must be finite")
            if abs(value) > math.pi + 1e-9:
                raise ValueError(f"head pose {name}={value} outside (-pi, pi]")

    def as_array(self) -> np.ndarray:
        return np.array([self.yaw, self.pitch, self.roll])

    def as_angles(self) -> np.ndarray:
        return self.as_array()


Pose = EyePose | HeadPose


def compose_target_pose(current: Pose, delta: Pose) -> Pose:
    """Componentwise sum of a pose and a same-kind increment, wrapped to (-pi, pi]."""
    if type(current) is not type(delta):
        raise ValueError(
            f"cannot compose {type(current).__name__} with {type(delta).__name__}"
        )
    if isinstance(current, EyePose):
        return EyePose(
            wrap_angle(current.yaw + delta.yaw),
            wrap_angle(current.pitch + delta.pitch),
        )
    return HeadPose(
        wrap_angle(current.yaw + delta.yaw),
        wrap_angle(current.pitch + delta.pitch),
        wrap_angle(current.roll + delta.roll),
    )


def rotation_zyx(angles: np.ndarray) -> np.ndarray:
    """Rotation matrices for intrinsic Z-Y-X Euler angles.

    ``angles`` has shape (..., 3) ordered (yaw, pitch, roll); the result has
    shape (..., 3, 3). This is the closed form of Rz @ Ry @ Rx.
    """
    angles = np.asarray(angles, dtype=float)
    y, p, r = angles[..., 0], angles[..., 1], angles[..., 2]
    cy, sy = np.cos(y), np.sin(y)
    cp, sp = np.cos(p), np.sin(p)
    cr, sr = np.cos(r), np.sin(r)
    R = np.empty(angles.shape[:-1] + (3, 3))
    R[..., 0, 0] = cy * cp
    R[..., 0, 1] = cy * sp * sr - sy * cr
    R[..., 0, 2] = cy * sp * cr + sy * sr
    R[..., 1, 0] = sy * cp
    R[..., 1, 1] = sy * sp * sr + cy * cr
    R[..., 1, 2] = sy * sp * cr - cy * sr
    R[..., 2, 0] = -sp
    R[..., 2, 1] = cp * sr
    R[..., 2, 2] = cp * cr
    return R


def _zyx_factors(angles: np.ndarray):
    """Per-axis factor matrices Rz, Ry, Rx and their angle derivatives."""
    angles = np.asarray(angles, dtype=float)
    shape = angles.shape[:-1]
    y, p, r = angles[..., 0], angles[..., 1], angles[..., 2]
    zero = np.zeros(shape)
    one = np.ones(shape)

    def stack(rows):
        return np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)

    cy, sy = np.cos(y), np.sin(y)
    cp, sp = np.cos(p), np.sin(p)
    cr, sr = np.cos(r), np.sin(r)
    Rz = stack([[cy, -sy, zero], [sy, cy, zero], [zero, zero, one]])
    Ry = stack([[cp, zero, sp], [zero, one, zero], [-sp, zero, cp]])
    Rx = stack([[one, zero, zero], [zero, cr, -sr], [zero, sr, cr]])
    dRz = stack([[-sy, -cy, zero], [cy, -sy, zero], [zero, zero, zero]])
    dRy = stack([[-sp, zero, cp], [zero, zero, zero], [-cp, zero, -sp]])
    dRx = stack([[zero, zero, zero], [zero, -sr, -cr], [zero, cr, -sr]])
    return Rz, Ry, Rx, dRz, dRy, dRx


def rotation_zyx_derivs(angles: np.ndarray) -> np.ndarray:
    """Derivatives of :func:`rotation_zyx` with respect to each angle.

    Returns shape (..., 3, 3, 3): axis -3 indexes the angle (yaw, pitch,
    roll); the trailing two axes are the matrix derivative.
    """
    Rz, Ry, Rx, dRz, dRy, dRx = _zyx_factors(angles)
    d_yaw = dRz @ Ry @ Rx
    d_pitch = Rz @ dRy @ Rx
    d_roll = Rz @ Ry @ dRx
    return np.stack([d_yaw, d_pitch, d_roll], axis=-3)


def euler_to_matrix(pose: Pose) -> np.ndarray:
    """Rotation matrix of a pose; eye poses are promoted with roll = 0."""
    if not isinstance(pose, (EyePose, HeadPose)):
        raise ValueError(f"expected EyePose or HeadPose, got {type(pose).__name__}")
    return rotation_zyx(pose.as_angles())


def check_rotation(R: np.ndarray, atol: float = ROTATION_ATOL) -> None:
    """Raise if R is not a rotation matrix to within ``atol``."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f"rotation matrix must be 3x3, got shape {R.shape}")
    if not np.all(np.isfinite(R)):
        raise ValueError("rotation matrix contains non-finite entries")
    if not np.allclose(R @ R.T, np.eye(3), atol=atol):
        raise ValueError("matrix is not orthogonal within tolerance")
    if abs(np.linalg.det(R) - 1.0) > atol:
        raise ValueError("matrix determinant differs from +1 beyond tolerance")


def geodesic_distance(R1: np.ndarray, R2: np.ndarray) -> float:
    """Geodesic angle between two validated rotation matrices, in [0, pi].

    Identical matrices denote the same rotation, so that case is answered
    with an exact 0.0 rather than arccos of a trace within rounding of 1.
    """
    check_rotation(R1)
    check_rotation(R2)
    R1 = np.asarray(R1, dtype=float)
    R2 = np.asarray(R2, dtype=float)
    if np.array_equal(R1, R2):
        return 0.0
    tr = float(np.trace(R1 @ R2.T))
    return float(math.acos(min(1.0, max(-1.0, (tr - 1.0) / 2.0))))


def geodesic_rows(Ra: np.ndarray, Rb: np.ndarray) -> np.ndarray:
    """Geodesic angles for stacks of rotations; trusted inputs, no validation."""
    tr = np.einsum("...ij,...ij->...", Ra, Rb)
    return np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))


def geodesic_to_reference_with_grad(
    angles: np.ndarray, R_ref: np.ndarray, grad_cap: float = GRAD_CAP
):
    """Geodesic distance d(R(angles), R_ref) and its gradient in the angles.

    ``angles`` has shape (..., 3); ``R_ref`` broadcasts as (..., 3, 3).
    Returns (distance (...,), gradient (..., 3)). The arccos derivative
    magnitude is capped at ``grad_cap`` so the gradient stays finite at the
    ends of the metric, where the exact derivative diverges.
    """
    angles = np.asarray(angles, dtype=float)
    R = rotation_zyx(angles)
    dR = rotation_zyx_derivs(angles)
    tr = np.einsum("...ij,...ij->...", R, R_ref)
    u = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    dist = np.arccos(u)
    # |d arccos/du| = 1/sqrt(1-u^2), capped at grad_cap.
    denom = np.sqrt(np.maximum(1.0 - u * u, 1.0 / (grad_cap * grad_cap)))
    dd_du = -1.0 / denom
    du_dangles = 0.5 * np.einsum("...aij,...ij->...a", dR, R_ref)
    return dist, dd_du[..., None] * du_dangles
