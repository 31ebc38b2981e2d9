import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ballbot.actuator import (
    ActuatorParams,
    IdentificationError,
    effective_torque,
    identify_friction,
    read_ramp_csv,
    simulate_ramp,
    write_ramp_csv,
)

P = ActuatorParams()  # tau_max 5.5, D_v 0.01, D_c 0.130


class TestEffectiveTorque:
    def test_dead_zone_small_command_at_rest(self):
        assert effective_torque(0.10, 0.0, P) == 0.0

    def test_dead_zone_boundary_exact(self):
        assert effective_torque(P.coulomb_nm, 0.0, P) == 0.0
        assert effective_torque(-P.coulomb_nm, 0.0, P) == 0.0

    def test_breakaway_subtracts_coulomb(self):
        assert abs(effective_torque(0.50, 0.0, P) - 0.370) < 1e-12

    def test_saturation_before_friction(self):
        # 10 Nm clamps to 5.5 before the friction terms apply.
        assert abs(effective_torque(10.0, 0.0, P) - (5.5 - 0.130)) < 1e-12
        w = 3.0
        assert abs(effective_torque(10.0, w, P) - (5.5 - P.viscous_nm_s_per_rad * w - 0.130)) < 1e-12

    def test_moving_wheel_friction_law(self):
        w = -2.0
        expected = 1.0 - P.viscous_nm_s_per_rad * w - P.coulomb_nm * np.sign(w)
        assert abs(effective_torque(1.0, w, P) - expected) < 1e-12

    def test_dead_zone_exactness_over_grid(self):
        cmds = np.linspace(-P.coulomb_nm, P.coulomb_nm, 2001)
        outs = np.array([effective_torque(float(c), 0.0, P) for c in cmds])
        assert np.all(outs == 0.0)

    @settings(max_examples=300, deadline=None)
    @given(cmd=st.floats(-20, 20), w=st.floats(-50, 50))
    def test_odd_symmetry(self, cmd, w):
        assert effective_torque(-cmd, -w, P) == pytest.approx(-effective_torque(cmd, w, P), abs=1e-12)

    @settings(max_examples=300, deadline=None)
    @given(cmd=st.floats(-20, 20), w=st.floats(-50, 50))
    def test_friction_passivity(self, cmd, w):
        from ballbot.actuator import STICTION_SPEED_EPS

        clamped = max(-P.tau_max_nm, min(P.tau_max_nm, cmd))
        friction = effective_torque(cmd, w, P) - clamped
        if abs(w) > STICTION_SPEED_EPS:
            assert friction * w <= 1e-12
        else:
            # Inside the stiction band the wheel counts as stationary and
            # Coulomb drag opposes the impending motion; the residual power
            # is bounded by the regularization velocity.
            assert friction * w <= P.coulomb_nm * STICTION_SPEED_EPS

    def test_non_finite_command_rejected(self):
        with pytest.raises(ValueError):
            effective_torque(float("nan"), 0.0, P)


class TestIdentification:
    def test_noise_free_recovery_within_2pct(self):
        true = ActuatorParams(viscous_nm_s_per_rad=0.01, coulomb_nm=0.130)
        log = simulate_ramp(true)
        d_v, d_c = identify_friction(log)
        assert abs(d_c - 0.130) / 0.130 < 0.02
        assert abs(d_v - 0.01) / 0.01 < 0.02

    def test_frictionless_recovers_zero(self):
        true = ActuatorParams(viscous_nm_s_per_rad=0.0, coulomb_nm=0.0)
        log = simulate_ramp(true, duration_s=10.0)
        d_v, d_c = identify_friction(log)
        assert d_c < 5e-3
        assert d_v < 5e-4

    def test_noisy_recovery_monte_carlo(self):
        true = ActuatorParams(viscous_nm_s_per_rad=0.01, coulomb_nm=0.130)
        errs_c, errs_v = [], []
        for seed in range(100):
            log = simulate_ramp(true, torque_noise_std=0.005, seed=seed)
            d_v, d_c = identify_friction(log)
            errs_c.append(abs(d_c - 0.130) / 0.130)
            errs_v.append(abs(d_v - 0.01) / 0.01)
        assert max(errs_c) < 0.10
        assert max(errs_v) < 0.10

    def test_no_breakaway_raises(self):
        log = [(t * 0.002, 0.01, 0.0) for t in range(100)]
        with pytest.raises(IdentificationError):
            identify_friction(log)

    def test_ramp_csv_roundtrip(self, tmp_path):
        log = simulate_ramp(ActuatorParams(), duration_s=1.0)
        path = tmp_path / "ramp.csv"
        write_ramp_csv(path, log)
        back = read_ramp_csv(path)
        np.testing.assert_allclose(np.asarray(back), np.asarray(log), rtol=0, atol=1e-12)
