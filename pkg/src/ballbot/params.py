"""Physical parameters of the ballbot and upper-body inertia composition.

The torso frame has its origin at the torso centre of mass, z up, x forward.
The "anchor" is the nominal ball-centre position expressed in the torso
frame, at (0, 0, -torso_com_height_m); wheels and the virtual joint are
located relative to it.

Default numeric values for masses, inertias and mounting geometry that the
hardware documentation does not publish are engineering placeholders; they
live in the config file and every benchmark is required to be insensitive
to moderate (+/-20%) perturbations of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .rotations import quat_from_axis_angle, quat_multiply, quat_to_matrix

GRAVITY = 9.81


def _point_mass_inertia(p: np.ndarray, m: float) -> np.ndarray:
    """Inertia tensor of a point mass about the frame origin."""
    p = np.asarray(p, dtype=float)
    return m * (float(p @ p) * np.eye(3) - np.outer(p, p))


@dataclass(frozen=True)
class UpperBodyLayout:
    """Link masses and attachment offsets for the 2-DoF head and two 4-DoF arms.

    Arm joint order (per arm): shoulder pitch (y), shoulder roll (x),
    elbow pitch (y), wrist pitch (y). Link point masses sit at the distal
    end of each link. Head joint order: pan (z), tilt (y).
    """

    shoulder_offset_m: tuple[float, float, float] = (0.0, 0.18, 0.55)
    upper_arm_length_m: float = 0.20
    forearm_length_m: float = 0.18
    hand_length_m: float = 0.10
    upper_arm_mass_kg: float = 0.6
    forearm_mass_kg: float = 0.4
    hand_mass_kg: float = 0.3
    neck_offset_m: tuple[float, float, float] = (0.0, 0.0, 0.62)
    head_offset_m: tuple[float, float, float] = (0.0, 0.0, 0.08)
    head_mass_kg: float = 0.8
    arm_joint_range_rad: float = math.pi / 2
    head_pan_range_rad: float = math.pi / 2
    head_tilt_range_rad: float = math.pi / 4

    @property
    def total_mass_kg(self) -> float:
        per_arm = self.upper_arm_mass_kg + self.forearm_mass_kg + self.hand_mass_kg
        return self.head_mass_kg + 2.0 * per_arm


@dataclass(frozen=True)
class UpperBodyConfig:
    """Joint values for the kinematic upper body (head + two arms).

    Joints are position-frozen during an episode; the upper body acts only
    through its composite inertia, never through reaction torques.
    """

    head_joints: tuple[float, float] = (0.0, 0.0)
    arm_joints: tuple[float, ...] = (0.0,) * 8  # left 4 then right 4
    layout: UpperBodyLayout = field(default_factory=UpperBodyLayout)

    def __post_init__(self):
        if len(self.head_joints) != 2 or len(self.arm_joints) != 8:
            raise ValueError("expected 2 head joints and 8 arm joints")
        lay = self.layout
        ranges = [lay.head_pan_range_rad, lay.head_tilt_range_rad]
        for name, q, lim in zip(("head_pan", "head_tilt"), self.head_joints, ranges):
            if abs(q) > lim + 1e-12:
                raise ValueError(f"{name}={q:.4f} rad outside control range +/-{lim:.4f}")
        for i, q in enumerate(self.arm_joints):
            if abs(q) > lay.arm_joint_range_rad + 1e-12:
                raise ValueError(
                    f"arm joint {i}={q:.4f} rad outside control range "
                    f"+/-{lay.arm_joint_range_rad:.4f}"
                )

    def point_masses(self) -> list[tuple[np.ndarray, float]]:
        """Forward kinematics: (position in torso-anchor frame, mass) per link end.

        The anchor frame shares the torso axes but sits at the nominal ball
        centre, so positions here are independent of the composite CoM height.
        """
        lay = self.layout
        out: list[tuple[np.ndarray, float]] = []

        pan, tilt = self.head_joints
        r_head = _rot_z(pan) @ _rot_y(tilt)
        neck = np.asarray(lay.neck_offset_m)
        out.append((neck + r_head @ np.asarray(lay.head_offset_m), lay.head_mass_kg))

        sx, sy, sz = lay.shoulder_offset_m
        for side, joints in ((+1.0, self.arm_joints[:4]), (-1.0, self.arm_joints[4:])):
            q1, q2, q3, q4 = joints
            shoulder = np.array([sx, side * sy, sz])
            r12 = _rot_y(q1) @ _rot_x(q2)
            elbow = shoulder + r12 @ np.array([0.0, 0.0, -lay.upper_arm_length_m])
            r123 = r12 @ _rot_y(q3)
            wrist = elbow + r123 @ np.array([0.0, 0.0, -lay.forearm_length_m])
            r1234 = r123 @ _rot_y(q4)
            hand = wrist + r1234 @ np.array([0.0, 0.0, -lay.hand_length_m])
            out.append((elbow, lay.upper_arm_mass_kg))
            out.append((wrist, lay.forearm_mass_kg))
            out.append((hand, lay.hand_mass_kg))
        return out

    def mirrored(self) -> "UpperBodyConfig":
        """Left/right swapped configuration (roll joints flip sign)."""
        l, r = self.arm_joints[:4], self.arm_joints[4:]

        def flip(j):
            return (j[0], -j[1], j[2], j[3])

        return replace(self, arm_joints=flip(r) + flip(l))


def _rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class BodyParams:
    """Rigid-body and drive-geometry parameters.

    torso_* fields describe the composite torso (frame, electronics and the
    upper body at its current joint configuration). torso_com_height_m is
    measured above the ball centre. Wheel mounting: contact point at
    wheel_mount_zenith_angle_rad from the torso z-axis through the ball
    centre, one wheel per azimuth.
    """

    torso_mass_kg: float
    torso_inertia_kg_m2: np.ndarray  # 3x3 about the torso CoM
    torso_com_height_m: float
    ball_mass_kg: float
    torso_com_lateral_m: tuple[float, float] = (0.0, 0.0)
    ball_radius_m: float = 0.110
    wheel_radius_m: float = 0.050
    wheel_mount_zenith_angle_rad: float = math.radians(45.0)
    wheel_azimuths_rad: tuple[float, float, float] = (0.0, 2 * math.pi / 3, 4 * math.pi / 3)
    roller_count_per_wheel: int = 12
    roller_radius_m: float = 0.012

    def __post_init__(self):
        if self.ball_radius_m <= 0 or self.wheel_radius_m <= 0 or self.roller_radius_m <= 0:
            raise ValueError("radii must be positive")
        if self.torso_mass_kg <= 0 or self.ball_mass_kg <= 0:
            raise ValueError("masses must be positive")
        inertia = np.asarray(self.torso_inertia_kg_m2, dtype=float)
        if inertia.shape != (3, 3):
            raise ValueError("torso inertia must be 3x3")
        if not np.allclose(inertia, inertia.T, atol=1e-9):
            raise ValueError("torso inertia must be symmetric")
        if np.any(np.linalg.eigvalsh(inertia) <= 0):
            raise ValueError("torso inertia must be positive definite")
        az = np.asarray(self.wheel_azimuths_rad, dtype=float)
        spacing = np.sort((az - az[0]) % (2 * math.pi))
        if not np.allclose(spacing, [0.0, 2 * math.pi / 3, 4 * math.pi / 3], atol=1e-9):
            raise ValueError("wheel azimuths must be 120 degrees apart")
        object.__setattr__(self, "torso_inertia_kg_m2", inertia)

    @property
    def ball_inertia_kg_m2(self) -> float:
        # Hollow spherical shell.
        return (2.0 / 3.0) * self.ball_mass_kg * self.ball_radius_m**2

    @property
    def total_mass_kg(self) -> float:
        return self.torso_mass_kg + self.ball_mass_kg

    def anchor_in_torso(self) -> np.ndarray:
        """Nominal ball-centre position in the torso (CoM) frame.

        The anchor is the geometric centre of the wheel tripod; with an
        asymmetric upper body the CoM sits laterally offset from it.
        """
        return np.array(
            [-self.torso_com_lateral_m[0], -self.torso_com_lateral_m[1], -self.torso_com_height_m]
        )

    def wheel_frames(self) -> list[dict[str, np.ndarray]]:
        """Per-wheel geometry in the torso-anchor frame (origin at ball centre).

        Returns for each wheel the radial contact direction u (ball centre to
        contact), the wheel spin axis (meridional tangent, pointing
        down-slope) and the hub position.
        """
        alpha = self.wheel_mount_zenith_angle_rad
        frames = []
        for beta in self.wheel_azimuths_rad:
            sa, ca = math.sin(alpha), math.cos(alpha)
            sb, cb = math.sin(beta), math.cos(beta)
            u = np.array([sa * cb, sa * sb, ca])
            axis = np.array([ca * cb, ca * sb, -sa])  # meridional tangent
            hub = (self.ball_radius_m + self.wheel_radius_m) * u
            frames.append({"u": u, "axis": axis, "hub": hub})
        return frames


@dataclass(frozen=True)
class VirtualJointParams:
    """Training-time translational spring-damper between torso anchor and ball.

    Constrains relative translation only; relative rotation stays free, so
    the coupling behaves like a ball joint. rest_drop_m is the settled
    torso drop: the spring anchors where the ball centre sits once the
    wheel contacts carry the full torso weight, so the joint itself is
    unloaded at rest. Disabled for evaluation.
    """

    enabled: bool = False
    stiffness_n_per_m: float = 3.0e5
    damping_ns_per_m: float = 95.0
    rest_drop_m: float = 0.0

    def __post_init__(self):
        if self.stiffness_n_per_m < 0 or self.damping_ns_per_m < 0:
            raise ValueError("virtual joint stiffness/damping must be >= 0")


def compose_upper_body_inertia(cfg: UpperBodyConfig, base: BodyParams) -> BodyParams:
    """Recompute composite torso mass properties for an upper-body configuration.

    base declares the home-configuration composite (all joints zero). The
    upper-body point masses are moved from their home positions to their
    forward-kinematic positions at cfg; total mass is unchanged and the
    returned inertia is expressed about the new composite CoM.
    """
    home = UpperBodyConfig(layout=cfg.layout)
    pm_home = home.point_masses()
    pm_cfg = cfg.point_masses()

    m_total = base.torso_mass_kg
    # Work in the anchor frame (ball centre), where FK positions live.
    com0 = np.array(
        [base.torso_com_lateral_m[0], base.torso_com_lateral_m[1], base.torso_com_height_m]
    )
    inertia_origin = base.torso_inertia_kg_m2 + _point_mass_inertia(com0, m_total)

    shift = np.zeros(3)
    for (p_new, m), (p_old, _) in zip(pm_cfg, pm_home):
        shift += m * (p_new - p_old)
        inertia_origin = inertia_origin + _point_mass_inertia(p_new, m) - _point_mass_inertia(p_old, m)
    com = com0 + shift / m_total
    inertia_com = inertia_origin - _point_mass_inertia(com, m_total)
    # Guard against asymmetric float residue before the SPD check.
    inertia_com = 0.5 * (inertia_com + inertia_com.T)

    return replace(
        base,
        torso_inertia_kg_m2=inertia_com,
        torso_com_height_m=float(com[2]),
        torso_com_lateral_m=(float(com[0]), float(com[1])),
    )


def composite_com_offset(cfg: UpperBodyConfig, base: BodyParams) -> np.ndarray:
    """Full 3D CoM shift (anchor frame) of the composite torso at cfg vs home."""
    home = UpperBodyConfig(layout=cfg.layout)
    shift = np.zeros(3)
    for (p_new, m), (p_old, _) in zip(cfg.point_masses(), home.point_masses()):
        shift += m * (p_new - p_old)
    return shift / base.torso_mass_kg


def default_body_params() -> BodyParams:
    """Composite parameters at the home upper-body configuration.

    Core torso values are placeholders (not published for the hardware);
    the ball radius comes from the 220 mm sphere.
    """
    layout = UpperBodyLayout()
    core_mass = 12.0 - layout.total_mass_kg
    core_com = np.array([0.0, 0.0, 0.40])  # anchor frame
    core_inertia = np.diag([0.40, 0.40, 0.15])

    m_total = core_mass
    moment = core_mass * core_com
    inertia_origin = core_inertia + _point_mass_inertia(core_com, core_mass)
    for p, m in UpperBodyConfig(layout=layout).point_masses():
        m_total += m
        moment = moment + m * p
        inertia_origin = inertia_origin + _point_mass_inertia(p, m)
    com = moment / m_total
    inertia_com = inertia_origin - _point_mass_inertia(com, m_total)

    return BodyParams(
        torso_mass_kg=m_total,
        torso_inertia_kg_m2=0.5 * (inertia_com + inertia_com.T),
        torso_com_height_m=float(com[2]),
        torso_com_lateral_m=(float(com[0]), float(com[1])),
        ball_mass_kg=4.0,
    )


def quat_about(axis_xyz: tuple[float, float, float], angle: float) -> np.ndarray:
    return quat_from_axis_angle(np.asarray(axis_xyz, dtype=float), angle)


__all__ = [
    "GRAVITY",
    "BodyParams",
    "UpperBodyConfig",
    "UpperBodyLayout",
    "VirtualJointParams",
    "compose_upper_body_inertia",
    "composite_com_offset",
    "default_body_params",
    "quat_about",
    "quat_multiply",
    "quat_to_matrix",
]
