import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ballbot.contact import (
    ContactPoint,
    FrictionSpec,
    ImpedanceSpec,
    contact_elastic_energy,
    detect_contacts,
    friction_forces,
    impedance_at,
    normal_force,
)
from ballbot.dynamics import BallbotModel, static_equilibrium_state, upright_state
from ballbot.params import default_body_params


def _cp(normal=(0.0, 0.0, 1.0)):
    return ContactPoint(
        position=np.zeros(3),
        normal=np.asarray(normal, dtype=float),
        penetration=1e-3,
        bodies=("a", "b"),
    )


class TestNormalForce:
    def test_zero_at_zero_penetration(self):
        assert normal_force(0.0, 0.0, ImpedanceSpec()) == 0.0

    def test_impedance_reaches_end_value_at_width(self):
        spec = ImpedanceSpec()
        assert impedance_at(spec.width_m, spec) == spec.d1 == 0.99
        assert impedance_at(10 * spec.width_m, spec) == spec.d1

    def test_impedance_starts_at_d0(self):
        spec = ImpedanceSpec()
        assert impedance_at(0.0, spec) == spec.d0 == 0.85

    def test_monotone_in_penetration(self):
        spec = ImpedanceSpec()
        pens = np.linspace(0, 2 * spec.width_m, 50)
        forces = [normal_force(float(p), 0.0, spec) for p in pens]
        assert all(b > a for a, b in zip(forces, forces[1:]))
        assert normal_force(2e-3, 0.0, spec) > normal_force(1e-3, 0.0, spec)

    def test_negative_penetration_rejected(self):
        with pytest.raises(ValueError):
            normal_force(-1e-6, 0.0, ImpedanceSpec())

    def test_clamped_non_adhesive(self):
        # Fast separation would otherwise give a pulling force.
        assert normal_force(1e-4, -10.0, ImpedanceSpec()) == 0.0

    def test_elastic_energy_matches_work_integral(self):
        spec = ImpedanceSpec()
        p = 2.5e-3
        # Independent fine trapezoid of the static force law.
        xs = np.linspace(0, p, 20001)
        work = np.trapezoid([normal_force(float(x), 0.0, spec) for x in xs], xs)
        assert abs(contact_elastic_energy(p, spec) - work) < 1e-6 * max(work, 1.0)


class TestFrictionForces:
    def test_zero_velocity_zero_force(self):
        f_t, tau_s, tau_r = friction_forces(_cp(), np.zeros(6), FrictionSpec(), 100.0)
        assert np.allclose(f_t, 0) and tau_s == 0 and np.allclose(tau_r, 0)

    def test_coulomb_limit_pure_sliding(self):
        spec = FrictionSpec(mu_slide=0.8, channels=6)
        vel = np.array([2.0, 0, 0, 0, 0, 0])
        f_t, _, _ = friction_forces(_cp(), vel, spec, 100.0)
        assert abs(np.linalg.norm(f_t) - 80.0) < 1e-9
        assert f_t[0] < 0  # opposes motion

    def test_negative_normal_force_rejected(self):
        with pytest.raises(ValueError):
            friction_forces(_cp(), np.zeros(6), FrictionSpec(), -1.0)

    def test_three_channel_has_no_spin_or_roll(self):
        spec = FrictionSpec(channels=3)
        vel = np.array([0.1, 0, 0, 1.0, 2.0, 3.0])
        f_t, tau_s, tau_r = friction_forces(_cp(), vel, spec, 50.0)
        assert tau_s == 0.0 and np.allclose(tau_r, 0.0)
        assert np.linalg.norm(f_t) > 0

    def test_sticking_ramp_proportional_to_slip(self):
        spec = FrictionSpec(mu_slide=1.0, channels=3)
        f1, _, _ = friction_forces(_cp(), np.array([1e-4, 0, 0, 0, 0, 0]), spec, 10.0)
        f2, _, _ = friction_forces(_cp(), np.array([2e-4, 0, 0, 0, 0, 0]), spec, 10.0)
        assert abs(f2[0] / f1[0] - 2.0) < 1e-9

    @settings(max_examples=200, deadline=None)
    @given(
        vx=st.floats(-5, 5), vy=st.floats(-5, 5), vz=st.floats(-1, 1),
        wx=st.floats(-20, 20), wy=st.floats(-20, 20), wz=st.floats(-20, 20),
        nf=st.floats(0, 500),
    )
    def test_cone_containment_and_dissipation(self, vx, vy, vz, wx, wy, wz, nf):
        spec = FrictionSpec(mu_slide=0.9, mu_torsion_m=0.005, mu_roll_m=0.0002, channels=6)
        vel = np.array([vx, vy, vz, wx, wy, wz])
        f_t, tau_s, tau_r = friction_forces(_cp(), vel, spec, nf)
        # Tangential force within the sliding cone.
        assert np.linalg.norm(f_t) <= spec.mu_slide * nf + 1e-9
        # Combined channel vector within the elliptic cone.
        q = math.sqrt(
            float(f_t @ f_t) / spec.mu_slide**2
            + (tau_s / spec.mu_torsion_m) ** 2
            + float(tau_r @ tau_r) / spec.mu_roll_m**2
        )
        assert q <= nf + 1e-9
        # Total friction power never positive.
        n = np.array([0.0, 0.0, 1.0])
        v_t = vel[:3] - vel[2] * n
        power = float(f_t @ v_t) + tau_s * wz + float(tau_r @ np.array([wx, wy, 0.0]))
        assert power <= 1e-12


class TestDetectContacts:
    def test_airborne_ball_no_torso_is_empty(self):
        p = default_body_params()
        s = upright_state(p)
        s.ball_position[2] = 1.0 + p.ball_radius_m
        s.torso_position[2] += 10.0  # torso parked far away
        assert detect_contacts(s, p, tier="granular") == []

    def test_settled_assembly_one_ground_three_rollers(self):
        p = default_body_params()
        m = BallbotModel(p, tier="granular")
        s = static_equilibrium_state(m)
        cs = detect_contacts(s, p, tier="granular")
        grounds = [c for c in cs if c.bodies == ("ball", "ground")]
        rollers = [c for c in cs if "roller" in c.bodies[0]]
        assert len(grounds) == 1
        assert len(rollers) == 3
        wheels = {c.bodies[0].split("/")[0] for c in rollers}
        assert len(wheels) == 3  # one contact per wheel

    def test_roller_handover_changes_index_keeps_count(self):
        from scipy.optimize import brentq

        p = default_body_params()
        m = BallbotModel(p, tier="granular")
        s = static_equilibrium_state(m)
        before = {c.bodies[0] for c in detect_contacts(s, p, tier="granular") if "roller" in c.bodies[0]}
        assert before == {"wheel0/roller0", "wheel1/roller0", "wheel2/roller0"}

        # Rotate the wheels past the half-pitch crossover and let the torso
        # re-settle onto the incoming rollers.
        s.wheel_angles[:] = 1.3 * math.pi / p.roller_count_per_wheel

        def residual(drop):
            st = s.copy()
            st.torso_position[2] -= drop
            return m.step(st, np.zeros(3)).torso_linvel[2]

        s.torso_position[2] -= brentq(residual, -2e-3, 1e-2, xtol=1e-13)
        cs = detect_contacts(s, p, tier="granular")
        rollers = [c for c in cs if "roller" in c.bodies[0]]
        assert len(rollers) == 3
        assert {c.bodies[0] for c in rollers} == {
            "wheel0/roller11", "wheel1/roller11", "wheel2/roller11",
        }

    def test_reduced_tier_reports_wheel_contacts(self):
        p = default_body_params()
        m = BallbotModel(p, tier="reduced")
        s = static_equilibrium_state(m)
        cs = detect_contacts(s, p, tier="reduced")
        assert {c.bodies[0] for c in cs if c.bodies[1] == "ball"} == {"wheel0", "wheel1", "wheel2"}

    def test_contact_normals_unit(self):
        p = default_body_params()
        m = BallbotModel(p, tier="granular")
        s = static_equilibrium_state(m)
        for c in detect_contacts(s, p, tier="granular"):
            assert abs(np.linalg.norm(c.normal) - 1.0) < 1e-9
            assert c.penetration >= 0


class TestTorsionalSpinDown:
    def _spin_down_time(self, mu_torsion):
        p = default_body_params()
        m = BallbotModel(
            p,
            ground_friction=FrictionSpec(mu_slide=0.9, mu_torsion_m=mu_torsion, mu_roll_m=0.0002),
            tier="granular",
        )
        s = upright_state(p)
        s.torso_position[2] += 10.0  # ball alone on the floor
        s.ball_angvel[:] = [0.0, 0.0, 12.0]
        steps = 0
        while abs(s.ball_angvel[2]) > 0.05 and steps < 400_000:
            s = m.step(s, np.zeros(3))
            steps += 1
        return steps

    def test_high_torsion_stops_spin_low_torsion_lingers(self):
        t_high = self._spin_down_time(0.06)
        t_low = self._spin_down_time(0.01)
        assert t_high < 100_000  # comes to rest
        assert t_low >= 5 * t_high
