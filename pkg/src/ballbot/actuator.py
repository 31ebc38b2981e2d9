"""Wheel motor model: saturation, viscous + Coulomb friction, dead zone.

The hub torque follows the no-load motor law

    I_motor * theta_dd = tau(t) - D_v * theta_d - D_c,   theta_d > 0

mirrored for negative speed. D_c is the breakaway torque: at standstill a
command of |tau| <= D_c moves nothing. The identification routine recovers
(D_v, D_c) from a logged torque ramp the same way the bench procedure
does on hardware: breakaway gives D_c, the steady-speed slope gives D_v.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

STICTION_SPEED_EPS = 1e-3  # rad/s: below this the wheel counts as stationary


class IdentificationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ActuatorParams:
    tau_max_nm: float = 5.5
    viscous_nm_s_per_rad: float = 0.01  # D_v, not published; identified value placeholder
    coulomb_nm: float = 0.130  # D_c, measured breakaway torque
    rotor_inertia_kg_m2: float = 5e-3

    def __post_init__(self):
        if self.tau_max_nm <= 0:
            raise ValueError("tau_max must be positive")
        if self.viscous_nm_s_per_rad < 0 or self.coulomb_nm < 0:
            raise ValueError("friction coefficients must be >= 0")


def effective_torque(cmd_nm: float, wheel_speed_rad_s: float, p: ActuatorParams) -> float:
    """Net torque at the hub after saturation and motor friction.

    Moving wheel: saturated command minus viscous and Coulomb drag.
    Stationary wheel: zero inside the dead zone, else the saturated command
    less the breakaway torque.
    """
    if not math.isfinite(cmd_nm):
        raise ValueError("torque command must be finite")
    cmd = max(-p.tau_max_nm, min(p.tau_max_nm, cmd_nm))
    w = wheel_speed_rad_s
    if abs(w) > STICTION_SPEED_EPS:
        return cmd - p.viscous_nm_s_per_rad * w - p.coulomb_nm * math.copysign(1.0, w)
    if abs(cmd) <= p.coulomb_nm:
        return 0.0
    return cmd - p.coulomb_nm * math.copysign(1.0, cmd)


def effective_torques(cmd_nm: np.ndarray, wheel_speeds: np.ndarray, p: ActuatorParams) -> np.ndarray:
    return np.array(
        [effective_torque(float(c), float(w), p) for c, w in zip(cmd_nm, wheel_speeds)]
    )


def simulate_ramp(
    p: ActuatorParams,
    ramp_rate_nm_s: float = 0.05,
    duration_s: float = 20.0,
    dt: float = 0.002,
    torque_noise_std: float = 0.0,
    seed: int = 0,
) -> list[tuple[float, float, float]]:
    """No-load ramp experiment: slowly increasing torque on a free wheel.

    Returns (t, applied torque, wheel speed) samples. Used to generate
    synthetic identification logs and by the bench CLI to produce example
    data.
    """
    rng = np.random.default_rng(seed)
    w = 0.0
    log = []
    n = int(duration_s / dt)
    for i in range(n):
        t = i * dt
        tau = ramp_rate_nm_s * t
        tau_meas = tau + (rng.normal(0.0, torque_noise_std) if torque_noise_std > 0 else 0.0)
        net = effective_torque(tau, w, p)
        w += dt * net / p.rotor_inertia_kg_m2
        log.append((t, tau_meas, w))
    return log


def identify_friction(
    ramp_log: list[tuple[float, float, float]],
    breakaway_speed_rad_s: float = 0.05,
) -> tuple[float, float]:
    """Recover (D_v, D_c) from a (t, tau, omega) ramp log.

    D_c is the applied torque at breakaway (first sample whose speed
    exceeds the threshold); D_v is the least-squares slope of
    (tau - D_c) against omega over the steady moving segment.
    """
    arr = np.asarray(ramp_log, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("ramp log must be rows of (t, tau, omega)")
    t, tau, omega = arr[:, 0], arr[:, 1], arr[:, 2]
    moving = np.nonzero(omega > breakaway_speed_rad_s)[0]
    if len(moving) == 0:
        raise IdentificationError("no breakaway found in ramp log")
    k0 = int(moving[0])
    # Breakaway torque from a local linear fit of the commanded ramp, so a
    # single noisy sample does not set D_c.
    lo, hi = max(0, k0 - 100), min(len(tau), k0 + 100)
    if hi - lo >= 3 and float(np.ptp(t[lo:hi])) > 0:
        coef = np.polyfit(t[lo:hi], tau[lo:hi], 1)
        d_c = max(0.0, float(np.polyval(coef, t[k0])))
    else:
        d_c = max(0.0, float(tau[k0]))

    # Steady segment: everything from breakaway on, excluding the initial
    # acceleration spike right after breakaway. Fit with an intercept so the
    # constant inertial offset of the still-accelerating ramp does not bias
    # the slope.
    seg = slice(min(k0 + int(0.1 * (len(tau) - k0)) + 1, len(tau) - 2), len(tau))
    w_seg, tau_seg = omega[seg], tau[seg]
    if len(w_seg) < 2 or float(np.ptp(w_seg)) < 1e-9:
        raise IdentificationError("no steady-speed segment after breakaway")
    design = np.column_stack([w_seg, np.ones_like(w_seg)])
    coef, *_ = np.linalg.lstsq(design, tau_seg - d_c, rcond=None)
    return max(0.0, float(coef[0])), d_c


def write_ramp_csv(path: str | Path, log: list[tuple[float, float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "tau_Nm", "omega_rad_s"])
        writer.writerows(log)


def read_ramp_csv(path: str | Path) -> list[tuple[float, float, float]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["t_s", "tau_Nm", "omega_rad_s"]:
            raise ValueError(f"unexpected ramp log header: {header}")
        return [(float(r[0]), float(r[1]), float(r[2])) for r in reader]


__all__ = [
    "STICTION_SPEED_EPS",
    "ActuatorParams",
    "IdentificationError",
    "effective_torque",
    "effective_torques",
    "identify_friction",
    "read_ramp_csv",
    "simulate_ramp",
    "write_ramp_csv",
]
