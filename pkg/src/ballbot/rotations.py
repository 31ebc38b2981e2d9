"""Quaternion and rotation helpers shared by the simulator and controllers.

Conventions:
  - Quaternions are wxyz, unit norm, mapping body coordinates to world
    coordinates (R(q) @ v_body = v_world).
  - Angular velocities are world-frame unless a function says otherwise.
  - Tilt is reported as (roll, pitch) of the body z-axis relative to gravity,
    extracted so that an upright body gives exactly (0, 0).
"""

from __future__ import annotations

import math

import numpy as np


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if n < 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix R such that R @ v_body = v_world."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = float(np.linalg.norm(axis))
    if n < 1e-12 or abs(angle) < 1e-15:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    s = math.sin(half) / n
    return np.array([math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_integrate(q: np.ndarray, omega_world: np.ndarray, dt: float) -> np.ndarray:
    """Advance q by a world-frame angular velocity over dt (exact exponential map)."""
    wx, wy, wz = omega_world
    mag = math.sqrt(wx * wx + wy * wy + wz * wz)
    if mag * dt < 1e-12:
        return quat_normalize(q)
    dq = quat_from_axis_angle(np.array([wx, wy, wz]), mag * dt)
    return quat_normalize(quat_multiply(dq, q))


def rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate body-frame vector v into the world frame."""
    return quat_to_matrix(q) @ np.asarray(v, dtype=float)


def rotate_inv(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate world-frame vector v into the body frame."""
    return quat_to_matrix(q).T @ np.asarray(v, dtype=float)


def tilt_angles(q: np.ndarray) -> tuple[float, float]:
    """Gravity-referenced (roll, pitch) of the body z-axis.

    roll is the rotation about the body x-axis and pitch about the body
    y-axis that tip the z-axis away from vertical; both are zero when the
    body z-axis points straight up, independent of yaw.
    """
    R = quat_to_matrix(q)
    # World up expressed in body coordinates is the third row of R.
    ux, uy, uz = R[2, 0], R[2, 1], R[2, 2]
    roll = math.atan2(uy, uz)
    pitch = math.atan2(-ux, math.sqrt(uy * uy + uz * uz))
    return roll, pitch


def yaw_angle(q: np.ndarray) -> float:
    """Heading of the body x-axis projected onto the ground plane."""
    R = quat_to_matrix(q)
    return math.atan2(R[1, 0], R[0, 0])


def quat_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """ZYX euler convention: yaw about z, then pitch about y, then roll about x."""
    qx = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), roll)
    qy = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), pitch)
    qz = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)
    return quat_normalize(quat_multiply(qz, quat_multiply(qy, qx)))


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi
