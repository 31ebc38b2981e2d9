"""Rigid-body model of the ballbot with penalty contacts.

Two fidelity tiers share one integrator:
  - "reduced": each omni-wheel is a rigid rim touching the ball at one
    point; slip along the roller (free) direction is projected out
    analytically, which is the classic omniwheel abstraction.
  - "granular": each wheel carries explicit free-spinning rollers; lateral
    compliance is an outcome of roller-ball contact, not an abstraction,
    and roller handover happens as the wheel turns.

The integrator is semi-implicit Euler: forces are evaluated at the current
state, velocities update first, then positions advance with the new
velocities and quaternions are renormalized. All randomness lives outside
this module; stepping is bit-deterministic.

Bookkeeping conventions:
  - torso_position is the composite torso CoM; the wheel assembly and the
    virtual-joint anchor hang off it at fixed body-frame offsets.
  - Wheel and roller spin states are lumped 1-DoF rotors: contact moments
    about their axes accelerate them, and that angular-momentum flow is
    subtracted from the torso so the assembly total stays consistent.
    Rotor gyroscopic coupling into the torso is neglected (small rotors).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .contact import (
    SLIP_EPS_M_S,
    SPIN_EPS_RAD_S,
    FrictionSpec,
    ImpedanceSpec,
    calibrated_impedance,
    contact_elastic_energy,
    detect_contacts,
)
from .params import GRAVITY, BodyParams, VirtualJointParams
from .rotations import quat_from_rpy, quat_to_matrix

DEFAULT_DT = 0.002


class NumericDivergenceError(RuntimeError):
    """Raised when integration produces a non-finite quantity."""

    def __init__(self, quantity: str, value):
        super().__init__(f"non-finite {quantity}: {value}")
        self.quantity = quantity
        self.value = value


class GeometryError(ValueError):
    pass


@dataclass
class SimState:
    """Full generalized coordinates and velocities of the assembly.

    Angular velocities are world-frame. Roller arrays are carried on both
    tiers but only advanced on the granular one.
    """

    torso_position: np.ndarray
    torso_quat: np.ndarray
    torso_linvel: np.ndarray
    torso_angvel: np.ndarray
    wheel_angles: np.ndarray
    wheel_speeds: np.ndarray
    roller_angles: np.ndarray  # (3, roller_count)
    roller_speeds: np.ndarray
    ball_position: np.ndarray
    ball_quat: np.ndarray
    ball_linvel: np.ndarray
    ball_angvel: np.ndarray
    time_s: float = 0.0

    def torso_rotation(self) -> np.ndarray:
        return quat_to_matrix(self.torso_quat)

    def ball_rotation(self) -> np.ndarray:
        return quat_to_matrix(self.ball_quat)

    def copy(self) -> "SimState":
        return SimState(
            torso_position=self.torso_position.copy(),
            torso_quat=self.torso_quat.copy(),
            torso_linvel=self.torso_linvel.copy(),
            torso_angvel=self.torso_angvel.copy(),
            wheel_angles=self.wheel_angles.copy(),
            wheel_speeds=self.wheel_speeds.copy(),
            roller_angles=self.roller_angles.copy(),
            roller_speeds=self.roller_speeds.copy(),
            ball_position=self.ball_position.copy(),
            ball_quat=self.ball_quat.copy(),
            ball_linvel=self.ball_linvel.copy(),
            ball_angvel=self.ball_angvel.copy(),
            time_s=self.time_s,
        )


def upright_state(
    params: BodyParams,
    yaw: float = 0.0,
    roll: float = 0.0,
    pitch: float = 0.0,
    ball_xy: tuple[float, float] = (0.0, 0.0),
    linvel_xy: tuple[float, float] = (0.0, 0.0),
    angvel: tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> SimState:
    """Assembled state: ball on the floor, torso anchor on the ball centre."""
    n_roll = params.roller_count_per_wheel
    q_t = quat_from_rpy(roll, pitch, yaw)
    rot = quat_to_matrix(q_t)
    p_ball = np.array([ball_xy[0], ball_xy[1], params.ball_radius_m])
    com = p_ball - rot @ params.anchor_in_torso()
    w = np.asarray(angvel, dtype=float)
    v_lin = np.array([linvel_xy[0], linvel_xy[1], 0.0])
    # Torso CoM rides the anchor: same linear velocity plus rotation effect.
    v_com = v_lin + np.cross(w, com - p_ball)
    ball_w = np.array([-v_lin[1], v_lin[0], 0.0]) / params.ball_radius_m  # rolling
    return SimState(
        torso_position=com,
        torso_quat=q_t,
        torso_linvel=v_com,
        torso_angvel=w.copy(),
        wheel_angles=np.zeros(3),
        wheel_speeds=np.zeros(3),
        roller_angles=np.zeros((3, n_roll)),
        roller_speeds=np.zeros((3, n_roll)),
        ball_position=p_ball,
        ball_quat=np.array([1.0, 0.0, 0.0, 0.0]),
        ball_linvel=v_lin.copy(),
        ball_angvel=ball_w,
        time_s=0.0,
    )


def wheel_ball_jacobian(params: BodyParams) -> np.ndarray:
    """Map ball angular velocity (torso frame, torso at rest) to wheel speeds.

    Row i is the moment direction of wheel i's drive constraint scaled by
    ball_radius / wheel_radius. Positive wheel speed follows the right-hand
    rule about the wheel's mounting axis.
    """
    alpha = params.wheel_mount_zenith_angle_rad
    if min(abs(math.sin(alpha)), abs(math.cos(alpha))) < 1e-6:
        raise GeometryError(f"degenerate wheel zenith angle {alpha} rad")
    ratio = params.ball_radius_m / params.wheel_radius_m
    rows = []
    for fr in params.wheel_frames():
        u, axis = fr["u"], fr["axis"]
        e_rim = np.cross(axis, -u)  # rim surface direction for positive speed
        rows.append(ratio * np.cross(u, e_rim))
    jac = np.array(rows)
    if abs(np.linalg.det(jac)) < 1e-9:
        raise GeometryError("wheel-ball kinematic map is singular")
    return jac


def virtual_joint_wrench(
    state: SimState, vj: VirtualJointParams, params: BodyParams
) -> tuple[np.ndarray, np.ndarray]:
    """Spring-damper wrench on the torso from the training-time ball joint.

    Returns (force, torque-about-torso-CoM); the ball receives the opposite
    force at its centre and no torque, so relative rotation stays free.
    """
    if not vj.enabled:
        return np.zeros(3), np.zeros(3)
    rot = state.torso_rotation()
    arm = rot @ (params.anchor_in_torso() + np.array([0.0, 0.0, vj.rest_drop_m]))
    anchor = state.torso_position + arm
    disp = anchor - state.ball_position
    v_anchor = state.torso_linvel + np.cross(state.torso_angvel, arm)
    rel_vel = v_anchor - state.ball_linvel
    force = -vj.stiffness_n_per_m * disp - vj.damping_ns_per_m * rel_vel
    torque = np.cross(arm, force)
    return force, torque


class BallbotModel:
    """Owns parameters and the contact configuration; steps SimStates.

    One model instance per simulation; instances are independent and hold
    no mutable state besides cached geometry.
    """

    def __init__(
        self,
        params: BodyParams,
        ground_friction: FrictionSpec | None = None,
        roller_friction: FrictionSpec | None = None,
        impedance: ImpedanceSpec | None = None,
        roller_impedance: ImpedanceSpec | None = None,
        tier: str = "reduced",
        # Gear-reflected motor rotor plus the omniwheel body itself.
        wheel_rotor_inertia_kg_m2: float = 5e-3,
        roller_inertia_kg_m2: float = 2e-6,
    ):
        if tier not in ("reduced", "granular"):
            raise ValueError(f"unknown tier {tier!r}")
        self.params = params
        self.ground_friction = ground_friction or FrictionSpec(channels=6)
        self.roller_friction = roller_friction or FrictionSpec(channels=3)
        # Ground: the full robot weight sinks the stiffening width into the
        # floor. Rollers: the per-wheel share of the torso weight deflects
        # 0.3 mm, stiff enough that load handover stays a single-roller
        # affair except right at the crossover angle.
        weight = params.total_mass_kg * GRAVITY
        self.impedance = impedance or calibrated_impedance(
            weight, ImpedanceSpec().width_m, damping_ratio=1.0, contact_mass_kg=params.ball_mass_kg
        )
        per_wheel = params.torso_mass_kg * GRAVITY / (3.0 * math.cos(params.wheel_mount_zenith_angle_rad))
        self.roller_impedance = roller_impedance or calibrated_impedance(
            per_wheel, 3e-4, damping_ratio=0.5, contact_mass_kg=3.0
        )
        self.tier = tier
        self.wheel_rotor_inertia = wheel_rotor_inertia_kg_m2
        self.roller_inertia = roller_inertia_kg_m2
        self._cache_geometry()

    def _cache_geometry(self):
        p = self.params
        frames = p.wheel_frames()
        self._u = np.array([f["u"] for f in frames])
        self._axis = np.array([f["axis"] for f in frames])
        self._hub = np.array([f["hub"] for f in frames])
        self._e2 = np.cross(self._axis, self._u)
        self._ring_r = p.wheel_radius_m - p.roller_radius_m
        n = p.roller_count_per_wheel
        self._roller_phase = 2.0 * math.pi * np.arange(n) / n
        self._anchor_local = p.anchor_in_torso()

        phys = np.zeros(K.PHYS_SIZE)
        phys[K.P_TORSO_MASS] = p.torso_mass_kg
        phys[K.P_BALL_MASS] = p.ball_mass_kg
        phys[K.P_BALL_INERTIA] = p.ball_inertia_kg_m2
        phys[K.P_BALL_RADIUS] = p.ball_radius_m
        phys[K.P_WHEEL_RADIUS] = p.wheel_radius_m
        phys[K.P_ROLLER_RADIUS] = p.roller_radius_m
        phys[K.P_ROTOR_INERTIA] = self.wheel_rotor_inertia
        phys[K.P_ROLLER_INERTIA] = self.roller_inertia
        phys[K.P_GRAVITY] = GRAVITY
        phys[K.P_TIER] = 1.0 if self.tier == "granular" else 0.0
        phys[K.P_ANCHOR : K.P_ANCHOR + 3] = self._anchor_local
        phys[K.P_TORSO_INERTIA : K.P_TORSO_INERTIA + 9] = p.torso_inertia_kg_m2.ravel()
        imp = self.impedance
        phys[K.P_IMP_D0] = imp.d0
        phys[K.P_IMP_D1] = imp.d1
        phys[K.P_IMP_WIDTH] = imp.width_m
        phys[K.P_IMP_KMAX] = imp.k_max_n_per_m
        phys[K.P_IMP_ZETA] = imp.damping_ratio
        phys[K.P_IMP_MASS] = imp.contact_mass_kg
        rimp = self.roller_impedance
        phys[K.P_RIMP_D0] = rimp.d0
        phys[K.P_RIMP_D1] = rimp.d1
        phys[K.P_RIMP_WIDTH] = rimp.width_m
        phys[K.P_RIMP_KMAX] = rimp.k_max_n_per_m
        phys[K.P_RIMP_ZETA] = rimp.damping_ratio
        phys[K.P_RIMP_MASS] = rimp.contact_mass_kg
        phys[K.P_G_MU_SLIDE] = self.ground_friction.mu_slide
        phys[K.P_G_MU_TORSION] = self.ground_friction.mu_torsion_m
        phys[K.P_G_MU_ROLL] = self.ground_friction.mu_roll_m
        phys[K.P_R_MU_SLIDE] = self.roller_friction.mu_slide
        phys[K.P_SLIP_EPS] = SLIP_EPS_M_S
        phys[K.P_SPIN_EPS] = SPIN_EPS_RAD_S
        phys[K.P_RING_R] = self._ring_r
        phys[K.P_N_ROLLERS] = float(n)
        self._phys = phys
        self._nq = 17 + 3 * n
        self._nv = 15 + 3 * n

    def with_params(self, params: BodyParams) -> "BallbotModel":
        return BallbotModel(
            params,
            self.ground_friction,
            self.roller_friction,
            self.impedance,
            self.tier,
            self.wheel_rotor_inertia,
            self.roller_inertia,
        )

    # -- stepping ---------------------------------------------------------

    def pack(self, state: SimState) -> tuple[np.ndarray, np.ndarray]:
        """Flatten a SimState into (q, v) kernel arrays."""
        q = np.empty(self._nq)
        v = np.empty(self._nv)
        q[K.Q_PT : K.Q_PT + 3] = state.torso_position
        q[K.Q_QT : K.Q_QT + 4] = state.torso_quat
        q[K.Q_PB : K.Q_PB + 3] = state.ball_position
        q[K.Q_QB : K.Q_QB + 4] = state.ball_quat
        q[K.Q_WHEEL : K.Q_WHEEL + 3] = state.wheel_angles
        q[K.Q_ROLLER :] = state.roller_angles.ravel()
        v[K.V_VT : K.V_VT + 3] = state.torso_linvel
        v[K.V_WT : K.V_WT + 3] = state.torso_angvel
        v[K.V_VB : K.V_VB + 3] = state.ball_linvel
        v[K.V_WB : K.V_WB + 3] = state.ball_angvel
        v[K.V_WHEEL : K.V_WHEEL + 3] = state.wheel_speeds
        v[K.V_ROLLER :] = state.roller_speeds.ravel()
        return q, v

    def unpack(self, q: np.ndarray, v: np.ndarray, time_s: float) -> SimState:
        n = self.params.roller_count_per_wheel
        return SimState(
            torso_position=q[K.Q_PT : K.Q_PT + 3].copy(),
            torso_quat=q[K.Q_QT : K.Q_QT + 4].copy(),
            torso_linvel=v[K.V_VT : K.V_VT + 3].copy(),
            torso_angvel=v[K.V_WT : K.V_WT + 3].copy(),
            wheel_angles=q[K.Q_WHEEL : K.Q_WHEEL + 3].copy(),
            wheel_speeds=v[K.V_WHEEL : K.V_WHEEL + 3].copy(),
            roller_angles=q[K.Q_ROLLER :].reshape(3, n).copy(),
            roller_speeds=v[K.V_ROLLER :].reshape(3, n).copy(),
            ball_position=q[K.Q_PB : K.Q_PB + 3].copy(),
            ball_quat=q[K.Q_QB : K.Q_QB + 4].copy(),
            ball_linvel=v[K.V_VB : K.V_VB + 3].copy(),
            ball_angvel=v[K.V_WB : K.V_WB + 3].copy(),
            time_s=time_s,
        )

    def step(
        self,
        state: SimState,
        wheel_torques: np.ndarray,
        dt: float = DEFAULT_DT,
        vj: VirtualJointParams | None = None,
    ) -> SimState:
        """One internal physics step (velocities first, then positions)."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        tau_cmd = np.asarray(wheel_torques, dtype=float)
        if tau_cmd.shape != (3,) or not np.all(np.isfinite(tau_cmd)):
            raise NumericDivergenceError("wheel_torques", tau_cmd)
        q, v = self.pack(state)
        q_out = np.empty_like(q)
        v_out = np.empty_like(v)
        self._set_vj(vj)
        status = K.step_kernel(
            q, v, tau_cmd, dt, self._phys,
            self._u, self._axis, self._e2, self._hub, self._roller_phase,
            q_out, v_out,
        )
        if status != 0:
            raise NumericDivergenceError("state", self._first_nonfinite(q_out, v_out))
        return self.unpack(q_out, v_out, state.time_s + dt)

    def step_packed(
        self,
        q: np.ndarray,
        v: np.ndarray,
        tau_cmd: np.ndarray,
        dt: float,
        vj: VirtualJointParams | None,
        q_out: np.ndarray,
        v_out: np.ndarray,
    ) -> int:
        """Array-in/array-out stepping for hot loops (env, benchmarks)."""
        self._set_vj(vj)
        return K.step_kernel(
            q, v, tau_cmd, dt, self._phys,
            self._u, self._axis, self._e2, self._hub, self._roller_phase,
            q_out, v_out,
        )

    def _set_vj(self, vj: VirtualJointParams | None):
        if vj is not None and vj.enabled:
            self._phys[K.P_VJ_ENABLED] = 1.0
            self._phys[K.P_VJ_K] = vj.stiffness_n_per_m
            self._phys[K.P_VJ_C] = vj.damping_ns_per_m
            self._phys[K.P_VJ_REST] = vj.rest_drop_m
        else:
            self._phys[K.P_VJ_ENABLED] = 0.0

    def fitted_virtual_joint(
        self,
        stiffness_n_per_m: float = 3.0e5,
        damping_ns_per_m: float = 95.0,
    ) -> VirtualJointParams:
        """Virtual joint whose rest point matches the settled geometry.

        With the rest drop fitted, the spring is unloaded at static
        equilibrium and the wheel contacts keep carrying the full torso
        weight, which is the contact condition training relies on.
        """
        eq = static_equilibrium_state(self)
        nominal = upright_state(self.params)
        drop = float(nominal.torso_position[2] - nominal.ball_position[2]) - float(
            eq.torso_position[2] - eq.ball_position[2]
        )
        return VirtualJointParams(
            enabled=True,
            stiffness_n_per_m=stiffness_n_per_m,
            damping_ns_per_m=damping_ns_per_m,
            rest_drop_m=drop,
        )

    @staticmethod
    def _first_nonfinite(q: np.ndarray, v: np.ndarray):
        for name, arr in (("positions", q), ("velocities", v)):
            if not np.all(np.isfinite(arr)):
                return f"{name}: {arr}"
        return "unknown"

    # -- audits -----------------------------------------------------------

    def total_energy(self, state: SimState, vj: VirtualJointParams | None = None) -> float:
        """Kinetic + gravitational + elastic (contact and virtual joint) energy."""
        p = self.params
        rot_t = state.torso_rotation()
        inertia_w = rot_t @ p.torso_inertia_kg_m2 @ rot_t.T
        e = 0.5 * p.torso_mass_kg * float(state.torso_linvel @ state.torso_linvel)
        e += 0.5 * float(state.torso_angvel @ inertia_w @ state.torso_angvel)
        e += 0.5 * p.ball_mass_kg * float(state.ball_linvel @ state.ball_linvel)
        e += 0.5 * p.ball_inertia_kg_m2 * float(state.ball_angvel @ state.ball_angvel)
        e += 0.5 * self.wheel_rotor_inertia * float(state.wheel_speeds @ state.wheel_speeds)
        e += 0.5 * self.roller_inertia * float((state.roller_speeds**2).sum())
        e += GRAVITY * (p.torso_mass_kg * state.torso_position[2] + p.ball_mass_kg * state.ball_position[2])
        for cp in self.detect_contacts(state):
            imp = self.impedance if cp.bodies == ("ball", "ground") else self.roller_impedance
            e += contact_elastic_energy(cp.penetration, imp)
        if vj is not None and vj.enabled:
            anchor = state.torso_position + rot_t @ self._anchor_local
            disp = anchor - state.ball_position
            e += 0.5 * vj.stiffness_n_per_m * float(disp @ disp)
        return e

    def detect_contacts(self, state: SimState):
        return detect_contacts(state, self.params, tier=self.tier)


def step(
    model: BallbotModel,
    state: SimState,
    wheel_torques: np.ndarray,
    dt: float = DEFAULT_DT,
    vj: VirtualJointParams | None = None,
) -> SimState:
    """Functional alias for BallbotModel.step."""
    return model.step(state, wheel_torques, dt, vj)


def static_equilibrium_state(
    model: BallbotModel,
    vj: VirtualJointParams | None = None,
    yaw: float = 0.0,
) -> SimState:
    """Upright home-configuration state with balanced contact forces.

    The ground normal must carry the full assembly weight regardless of how
    the torso load splits between wheel contacts and the virtual joint, so
    the ball penetration solves independently; the torso drop then solves a
    second 1-D balance. Valid for the laterally symmetric home pose.
    """
    from scipy.optimize import brentq

    from .contact import normal_force

    p = model.params
    base = upright_state(p, yaw=yaw)
    z_ball0 = base.ball_position[2]
    z_torso0 = base.torso_position[2]

    weight = p.total_mass_kg * GRAVITY
    pen_g = brentq(
        lambda x: normal_force(x, 0.0, model.impedance) - weight,
        0.0, 20.0 * model.impedance.width_m, xtol=1e-15,
    )

    def torso_residual(drop):
        st = base.copy()
        st.ball_position[2] = z_ball0 - pen_g
        st.torso_position[2] = z_torso0 - pen_g - drop
        nxt = model.step(st, np.zeros(3), DEFAULT_DT, vj)
        return nxt.torso_linvel[2]

    drop = brentq(torso_residual, 0.0, 0.05, xtol=1e-15)
    out = base.copy()
    out.ball_position[2] = z_ball0 - pen_g
    out.torso_position[2] = z_torso0 - pen_g - drop
    return out


def tilt_about_ball(state: SimState, roll: float = 0.0, pitch: float = 0.0) -> SimState:
    """Rotate the torso about the ball centre, preserving contact penetrations."""
    from .rotations import quat_multiply

    out = state.copy()
    dq = quat_from_rpy(roll, pitch, 0.0)
    rot = quat_to_matrix(dq)
    out.torso_quat = quat_multiply(dq, state.torso_quat)
    out.torso_position = state.ball_position + rot @ (state.torso_position - state.ball_position)
    return out


def settle(
    model: BallbotModel,
    state: SimState,
    duration_s: float = 0.5,
    dt: float = DEFAULT_DT,
    vj: VirtualJointParams | None = None,
) -> SimState:
    """Run zero-torque steps to let penalty contacts reach equilibrium."""
    zeros = np.zeros(3)
    for _ in range(int(round(duration_s / dt))):
        state = model.step(state, zeros, dt, vj)
    return state


def relaxed_state(
    model: BallbotModel,
    state: SimState | None = None,
    rounds: int = 40,
    steps_per_round: int = 10,
    dt: float = DEFAULT_DT,
    vj: VirtualJointParams | None = None,
    **upright_kwargs,
) -> SimState:
    """Shake down penalty contacts to a static-force balance.

    Alternates short zero-torque bursts with velocity zeroing so the
    penetrations converge to the static equilibrium without the assembly
    tipping over (the upright pose is an unstable equilibrium). Returns a
    state with zero velocities and settled contact penetrations.
    """
    if state is None:
        state = upright_state(model.params, **upright_kwargs)
    zeros3 = np.zeros(3)
    quat_t0 = state.torso_quat.copy()
    quat_b0 = state.ball_quat.copy()
    t0 = state.time_s
    for _ in range(rounds):
        for _ in range(steps_per_round):
            state = model.step(state, zeros3, dt, vj)
        state.torso_linvel[:] = 0.0
        state.torso_angvel[:] = 0.0
        state.ball_linvel[:] = 0.0
        state.ball_angvel[:] = 0.0
        state.wheel_speeds[:] = 0.0
        state.roller_speeds[:] = 0.0
        # Contact penetrations and spring stretches relax; orientation is
        # pinned so the unstable tilt mode cannot grow meanwhile.
        state.torso_quat = quat_t0.copy()
        state.ball_quat = quat_b0.copy()
    state.time_s = t0
    return state


__all__ = [
    "DEFAULT_DT",
    "BallbotModel",
    "GeometryError",
    "NumericDivergenceError",
    "SimState",
    "settle",
    "step",
    "upright_state",
    "virtual_joint_wrench",
    "wheel_ball_jacobian",
]
