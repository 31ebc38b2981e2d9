"""Simulated sensors and the non-slip forward-kinematics velocity estimator.

Proprioception: gravity-referenced roll/pitch (exact), the body-rate gyro
(exact rate plus iid Gaussian noise per axis), and wheel encoders. World
pose: planar ball-centre position and torso heading, noise-free by default
since the deployed localization is treated as drift-free; optional Gaussian
position noise is available for robustness studies.

The body-velocity estimator inverts the wheel-ball kinematic map under the
no-slip assumption, mirroring what runs on hardware where no velocimeter
exists. It degrades (finite but wrong) when the ball actually slips.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import SimState, wheel_ball_jacobian
from .params import BodyParams
from .rotations import quat_to_matrix, tilt_angles, yaw_angle


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SensorNoiseSpec:
    gyro_sigma_rad_s: float = 0.009
    pose_noise_m: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.gyro_sigma_rad_s < 0 or self.pose_noise_m < 0:
            raise ValueError("noise sigmas must be >= 0")

    def make_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def read_proprioception(
    state: SimState,
    noise: SensorNoiseSpec,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(roll/pitch, body angular rate, wheel speeds) with gyro noise applied.

    Pass the environment's generator for reproducible sequences; a fresh
    generator from the spec's seed is used otherwise.
    """
    if rng is None:
        rng = noise.make_rng()
    roll, pitch = tilt_angles(state.torso_quat)
    q_tilt = np.array([roll, pitch])
    omega_body = quat_to_matrix(state.torso_quat).T @ state.torso_angvel
    if noise.gyro_sigma_rad_s > 0:
        omega_body = omega_body + rng.normal(0.0, noise.gyro_sigma_rad_s, size=3)
    return q_tilt, omega_body, state.wheel_speeds.copy()


def read_world_pose(
    state: SimState,
    noise: SensorNoiseSpec | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, float]:
    """Planar ball-centre position and torso heading in the world frame."""
    p = state.ball_position[:2].copy()
    if noise is not None and noise.pose_noise_m > 0:
        if rng is None:
            rng = noise.make_rng()
        p = p + rng.normal(0.0, noise.pose_noise_m, size=2)
    return p, yaw_angle(state.torso_quat)


def estimate_body_velocity(
    wheel_speeds: np.ndarray,
    q_tilt: np.ndarray,
    params: BodyParams,
) -> np.ndarray:
    """Planar body-frame velocity from wheel speeds via non-slip kinematics.

    Inverts the wheel-ball map to get the ball's angular velocity relative
    to the torso, then converts to a rolling translation at the ball
    radius. Tilt enters only at second order, so the small-angle estimate
    ignores it beyond sanity checking.
    """
    q_tilt = np.asarray(q_tilt, dtype=float)
    if not np.all(np.isfinite(q_tilt)) or not np.all(np.isfinite(wheel_speeds)):
        raise EstimationError("non-finite estimator inputs")
    jac = wheel_ball_jacobian(params)  # raises GeometryError when singular
    omega_ball = np.linalg.solve(jac, np.asarray(wheel_speeds, dtype=float))
    # Rolling on the floor: v = omega x (r * z)
    r = params.ball_radius_m
    return np.array([omega_ball[1] * r, -omega_ball[0] * r])


def wheel_speeds_for_velocity(
    v_body_xy: np.ndarray,
    yaw_rate: float,
    params: BodyParams,
) -> np.ndarray:
    """Forward map: wheel speeds that realize a planar velocity + yaw rate.

    Exact inverse of estimate_body_velocity on the planar part; used by
    tests and the identification bench as the synthetic-data generator.
    """
    vx, vy = float(v_body_xy[0]), float(v_body_xy[1])
    r = params.ball_radius_m
    omega_ball = np.array([-vy / r, vx / r, yaw_rate])
    return wheel_ball_jacobian(params) @ omega_ball


__all__ = [
    "EstimationError",
    "SensorNoiseSpec",
    "estimate_body_velocity",
    "read_proprioception",
    "read_world_pose",
    "wheel_speeds_for_velocity",
]
