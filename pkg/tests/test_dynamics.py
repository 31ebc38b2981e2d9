import math

import numpy as np
import pytest
from scipy.optimize import curve_fit
from scipy.spatial.transform import Rotation

from ballbot.contact import FrictionSpec, normal_force
from ballbot.dynamics import (
    BallbotModel,
    GeometryError,
    NumericDivergenceError,
    relaxed_state,
    static_equilibrium_state,
    tilt_about_ball,
    upright_state,
    virtual_joint_wrench,
    wheel_ball_jacobian,
)
from ballbot.params import GRAVITY, VirtualJointParams, default_body_params
from ballbot.rotations import tilt_angles

P = default_body_params()


def planar_pendulum_eigenvalue(p=P):
    """Unstable eigenvalue of the pendulum-on-rolling-ball model.

    Lagrangian linearization with free torso-ball torque: the coupled
    (ball translation, tilt) system reduces to
    theta_dd = m l g theta / (M22 - M12^2 / M11).
    """
    m11 = p.ball_mass_kg + p.ball_inertia_kg_m2 / p.ball_radius_m**2 + p.torso_mass_kg
    m12 = p.torso_mass_kg * p.torso_com_height_m
    m22 = p.torso_inertia_kg_m2[0, 0] + p.torso_mass_kg * p.torso_com_height_m**2
    return math.sqrt(p.torso_mass_kg * GRAVITY * p.torso_com_height_m / (m22 - m12**2 / m11))


class TestEquilibrium:
    @pytest.mark.parametrize("tier", ["reduced", "granular"])
    def test_upright_rest_state_unchanged(self, tier):
        m = BallbotModel(P, tier=tier)
        s = static_equilibrium_state(m)
        s2 = m.step(s, np.zeros(3))
        assert np.abs(s2.torso_position - s.torso_position).max() < 1e-10
        assert np.abs(s2.torso_quat - s.torso_quat).max() < 1e-10
        assert np.abs(s2.torso_linvel).max() < 1e-10
        assert np.abs(s2.torso_angvel).max() < 1e-10
        assert np.abs(s2.ball_linvel).max() < 1e-10

    def test_ball_height_near_radius_in_contact(self):
        m = BallbotModel(P, tier="granular")
        s = static_equilibrium_state(m)
        assert abs(s.ball_position[2] - P.ball_radius_m) <= m.impedance.width_m + 1e-9

    def test_settled_ground_force_carries_total_weight(self):
        m = BallbotModel(P, tier="granular")
        s = static_equilibrium_state(m)
        ground = [c for c in m.detect_contacts(s) if c.bodies == ("ball", "ground")]
        nf = normal_force(ground[0].penetration, 0.0, m.impedance)
        assert abs(nf - P.total_mass_kg * GRAVITY) / (P.total_mass_kg * GRAVITY) < 0.02


class TestFreeFlight:
    def _ball_alone(self):
        s = upright_state(P)
        s.torso_position[2] += 50.0  # torso parked far away, also in free fall
        s.ball_position[2] = 5.0
        s.ball_linvel[:] = [0.3, -0.2, 0.1]
        s.ball_angvel[:] = [3.0, -7.0, 11.0]
        return s

    def test_momentum_conservation_per_step(self):
        m = BallbotModel(P, tier="granular")
        s = self._ball_alone()
        dt = 0.002
        for _ in range(500):
            s2 = m.step(s, np.zeros(3), dt)
            dp = P.ball_mass_kg * (s2.ball_linvel - s.ball_linvel)
            assert abs(dp[0]) < 1e-9 and abs(dp[1]) < 1e-9
            assert abs(dp[2] + P.ball_mass_kg * GRAVITY * dt) < 1e-9
            dL = P.ball_inertia_kg_m2 * (s2.ball_angvel - s.ball_angvel)
            assert np.abs(dL).max() < 1e-9
            s = s2

    def test_quaternions_stay_unit(self):
        m = BallbotModel(P, tier="granular")
        s = self._ball_alone()
        for _ in range(2000):
            s = m.step(s, np.zeros(3))
            assert abs(np.linalg.norm(s.ball_quat) - 1.0) < 1e-9
            assert abs(np.linalg.norm(s.torso_quat) - 1.0) < 1e-9


class TestTiltGrowth:
    @pytest.mark.parametrize("tier", ["reduced", "granular"])
    def test_growth_rate_matches_linearized_eigenvalue(self, tier):
        m = BallbotModel(P, tier=tier)
        vj = m.fitted_virtual_joint()
        s = tilt_about_ball(static_equilibrium_state(m, vj), roll=math.radians(2.0))
        s = relaxed_state(m, state=s, vj=vj, rounds=60, steps_per_round=10)
        ts, tilts = [0.0], [tilt_angles(s.torso_quat)[0]]
        for _ in range(200):  # 0.4 s
            s = m.step(s, np.zeros(3), vj=vj)
            ts.append(ts[-1] + 0.002)
            tilts.append(tilt_angles(s.torso_quat)[0])
        ts, tilts = np.array(ts), np.array(tilts)

        # Monotone growth over the first 0.2 s at the control cadence,
        # allowing contact-stack micro-ringing well below the signal.
        ctrl = tilts[: 101 : 5]
        assert np.all(np.diff(ctrl) > -3e-4)
        assert tilts[100] > 1.5 * tilts[0]

        # From rest the linearized solution is theta0 cosh(lambda t).
        (_, lam_fit), _ = curve_fit(
            lambda t, a, b: a * np.cosh(b * t), ts, tilts, p0=(tilts[0], 5.0)
        )
        lam = planar_pendulum_eigenvalue()
        assert abs(lam_fit - lam) / lam < 0.05


class TestWheelBallJacobian:
    def test_pure_yaw_spin_equal_wheel_speeds(self):
        jac = wheel_ball_jacobian(P)
        speeds = jac @ np.array([0.0, 0.0, 2.0])
        assert np.abs(speeds - speeds[0]).max() < 1e-12
        assert abs(speeds[0]) > 0.1

    def test_inverse_roundtrip(self):
        jac = wheel_ball_jacobian(P)
        np.testing.assert_allclose(jac @ np.linalg.inv(jac), np.eye(3), rtol=0, atol=1e-12)

    def test_degenerate_zenith_raises(self):
        from dataclasses import replace

        with pytest.raises(GeometryError):
            wheel_ball_jacobian(replace(P, wheel_mount_zenith_angle_rad=0.0))
        with pytest.raises(GeometryError):
            wheel_ball_jacobian(replace(P, wheel_mount_zenith_angle_rad=math.pi / 2))

    def test_finite_difference_contact_velocity_oracle(self):
        """Wheel speeds must match finite-differenced contact-point motion.

        For each wheel, rotate the ball by a small angle about a random
        axis (scipy Rotation, independent math), track the surface material
        point at the contact, and project its displacement onto the rim
        drive direction. That displacement over r_wheel is the wheel
        rotation the no-slip constraint demands.
        """
        rng = np.random.default_rng(3)
        jac = wheel_ball_jacobian(P)
        alpha = P.wheel_mount_zenith_angle_rad
        dtheta = 1e-7
        for _ in range(10):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            omega = axis * 1.0  # rad/s
            speeds = jac @ omega
            rot = Rotation.from_rotvec(axis * dtheta)
            for i, beta in enumerate(P.wheel_azimuths_rad):
                sa, ca = math.sin(alpha), math.cos(alpha)
                sb, cb = math.sin(beta), math.cos(beta)
                u = np.array([sa * cb, sa * sb, ca])
                contact = P.ball_radius_m * u
                moved = rot.apply(contact)
                # Rim surface direction for positive wheel speed.
                wheel_axis = np.array([ca * cb, ca * sb, -sa])
                drive = np.cross(wheel_axis, -u)
                expected = float((moved - contact) @ drive) / dtheta / P.wheel_radius_m
                assert abs(speeds[i] - expected) < 1e-5

    def test_rolling_about_wheel_bisector_symmetry(self):
        # Ball rotation axis along the azimuth bisector of wheels 0 and 1:
        # those two wheels see mirror-equal speeds, the third runs opposite.
        jac = wheel_ball_jacobian(P)
        bis = 0.5 * (P.wheel_azimuths_rad[0] + P.wheel_azimuths_rad[1])
        omega = np.array([math.cos(bis), math.sin(bis), 0.0]) / P.ball_radius_m
        speeds = jac @ omega
        assert abs(speeds[0] - speeds[1]) < 1e-12
        assert np.sign(speeds[2]) != np.sign(speeds[0])
        assert abs(speeds[2]) > abs(speeds[0])


class TestVirtualJoint:
    def test_zero_wrench_at_nominal(self):
        vj = VirtualJointParams(enabled=True)
        s = upright_state(P)
        f, t = virtual_joint_wrench(s, vj, P)
        # Stiffness times position roundoff leaves sub-nano-Newton residue.
        assert np.abs(f).max() < 1e-9 and np.abs(t).max() < 1e-9

    def test_disabled_zero_wrench(self):
        s = upright_state(P)
        s.torso_position[2] += 0.05
        f, t = virtual_joint_wrench(s, VirtualJointParams(enabled=False), P)
        assert np.abs(f).max() == 0.0 and np.abs(t).max() == 0.0

    def test_vertical_displacement_hooke(self):
        vj = VirtualJointParams(enabled=True, stiffness_n_per_m=3e5)
        s = upright_state(P)
        s.torso_position[2] += 0.01
        f, _ = virtual_joint_wrench(s, vj, P)
        assert abs(f[0]) < 1e-9 and abs(f[1]) < 1e-9
        assert abs(f[2] - (-3e5 * 0.01)) < 1e-6

    def test_no_moment_about_ball_centre(self):
        # The ball receives a pure force; rotation stays free. The wrench
        # helper reports the torso side; the ball side is -force at its
        # centre by construction, so just confirm the torque reported acts
        # through the anchor arm (consistency of the pair).
        vj = VirtualJointParams(enabled=True)
        s = upright_state(P, roll=0.1)
        s.torso_position[0] += 0.004
        f, t = virtual_joint_wrench(s, vj, P)
        rot = s.torso_rotation()
        arm = rot @ (P.anchor_in_torso() + np.array([0.0, 0.0, vj.rest_drop_m]))
        np.testing.assert_allclose(t, np.cross(arm, f), rtol=0, atol=1e-12)

    def test_hover_wheel_normal_forces_sum_to_torso_weight(self):
        m = BallbotModel(P, tier="granular")
        vj = m.fitted_virtual_joint()
        s = static_equilibrium_state(m, vj)
        sums = []
        for k in range(500):  # 1 s
            s = m.step(s, np.zeros(3), vj=vj)
            if k % 10 == 0:
                total = 0.0
                for c in m.detect_contacts(s):
                    if "roller" in c.bodies[0]:
                        nf = normal_force(c.penetration, 0.0, m.roller_impedance)
                        total += nf * c.normal[2]
                sums.append(total)
        mean_vertical = float(np.mean(sums))
        weight = P.torso_mass_kg * GRAVITY
        assert abs(mean_vertical - weight) / weight < 0.05


class TestStepBehaviour:
    def test_determinism_bit_identical(self):
        m = BallbotModel(P, tier="granular")
        s0 = upright_state(P, roll=0.01, linvel_xy=(0.2, -0.1))
        tau = np.array([0.4, -0.2, 0.1])
        a = s0.copy()
        b = s0.copy()
        for _ in range(200):
            a = m.step(a, tau)
        for _ in range(200):
            b = m.step(b, tau)
        qa, va = m.pack(a)
        qb, vb = m.pack(b)
        assert np.array_equal(qa, qb) and np.array_equal(va, vb)

    def test_divergence_raises_with_quantity(self):
        m = BallbotModel(P, tier="reduced")
        s = upright_state(P)
        s.torso_linvel[:] = np.inf
        with pytest.raises(NumericDivergenceError) as err:
            m.step(s, np.zeros(3))
        assert "positions" in str(err.value) or "velocities" in str(err.value)

    def test_bad_torque_shape_rejected(self):
        m = BallbotModel(P, tier="reduced")
        with pytest.raises(NumericDivergenceError):
            m.step(upright_state(P), np.array([np.nan, 0, 0]))

    def test_dt_must_be_positive(self):
        m = BallbotModel(P, tier="reduced")
        with pytest.raises(ValueError):
            m.step(upright_state(P), np.zeros(3), dt=0.0)

    @pytest.mark.parametrize("tier", ["reduced", "granular"])
    def test_passive_energy_never_increases(self, tier):
        # Audited over the model's operating envelope: episodes terminate at
        # 20 degrees tilt, and beyond the fall the torso would need a
        # ground contact that is deliberately not modeled.
        m = BallbotModel(P, tier=tier)
        s = tilt_about_ball(static_equilibrium_state(m), roll=math.radians(1.0))
        e_prev = m.total_energy(s)
        e0 = e_prev
        for _ in range(400):
            s = m.step(s, np.zeros(3))
            roll, pitch = tilt_angles(s.torso_quat)
            if max(abs(roll), abs(pitch)) > math.radians(25.0):
                break
            e = m.total_energy(s)
            assert e <= e_prev + 1e-6
            e_prev = e
        assert e_prev <= e0 + 1e-6

    def test_tiers_agree_on_tilt_trajectory(self):
        """Reduced and granular torso-tilt traces within 10% RMS over 1 s."""
        traces = {}
        for tier in ("reduced", "granular"):
            m = BallbotModel(P, tier=tier)
            vj = m.fitted_virtual_joint()
            s = static_equilibrium_state(m, vj)
            tau = np.array([0.3, 0.0, 0.0])
            trace = []
            for _ in range(500):
                s = m.step(s, tau, vj=vj)
                trace.append(tilt_angles(s.torso_quat))
            traces[tier] = np.asarray(trace)
        diff = traces["reduced"] - traces["granular"]
        rms_diff = float(np.sqrt((diff**2).mean()))
        rms_sig = float(np.sqrt((traces["granular"] ** 2).mean()))
        assert rms_diff < 0.10 * rms_sig


class TestLateralCompliance:
    def test_driving_forward_produces_no_lateral_motion(self):
        """Commanding a +x roll must not push the ball sideways.

        On the granular tier this is an outcome of the rollers spinning
        freely, not of any anisotropic friction.
        """
        m = BallbotModel(P, tier="granular")
        vj = m.fitted_virtual_joint()
        s = static_equilibrium_state(m, vj)
        jac = wheel_ball_jacobian(P)
        # Ball torque for +x drive -> wheel torques via the transpose map.
        omega_dir = np.array([0.0, -1.0, 0.0])  # rolls the ball toward +x
        tau = np.linalg.solve(jac.T, -omega_dir) * 0.4
        roller_spins = []
        for _ in range(500):
            s = m.step(s, tau, vj=vj)
            roller_spins.append(np.abs(s.roller_speeds).max())
        moved = s.ball_position[:2] - np.zeros(2)
        assert abs(moved[0]) > 0.02  # actually drove somewhere
        assert abs(moved[1]) < 0.05 * abs(moved[0])
        assert max(roller_spins) > 1.0  # rollers spun freely en route
