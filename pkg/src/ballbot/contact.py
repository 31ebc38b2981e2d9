"""Contact detection and force resolution.

Two interface kinds are supported:
  - ball-ground: full six-channel friction (normal, two tangential,
    torsional spin, two rolling resistances),
  - roller-ball (or wheel-ball on the reduced tier): three channels
    (normal plus two tangential).

Normal forces follow a penetration-dependent impedance: contacts start
stiff and stiffen further over the first few millimetres of penetration.
Friction is a regularized Coulomb model constrained to an elliptic cone:
the channel vector (f_t / mu_slide, tau_spin / mu_torsion,
tau_roll / mu_roll) never exceeds the normal force in norm. Sticking is
resolved by a viscous ramp below the slip regularization velocity, so all
forces are continuous in the relative velocity and strictly dissipative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .params import BodyParams

# Regularization velocities: below these, friction ramps linearly to the
# cone boundary instead of switching sign discontinuously.
SLIP_EPS_M_S = 1e-3
SPIN_EPS_RAD_S = 1e-2


@dataclass(frozen=True)
class FrictionSpec:
    """Friction coefficients for one contact interface.

    mu_torsion_m and mu_roll_m carry a length scale so that coefficient
    times normal force is a torque.
    """

    mu_slide: float = 0.9
    mu_torsion_m: float = 0.005
    mu_roll_m: float = 0.0002
    channels: int = 6

    def __post_init__(self):
        if min(self.mu_slide, self.mu_torsion_m, self.mu_roll_m) < 0:
            raise ValueError("friction coefficients must be >= 0")
        if self.channels not in (3, 6):
            raise ValueError("channels must be 3 or 6")


@dataclass(frozen=True)
class ImpedanceSpec:
    """Penetration-dependent contact impedance.

    The dimensionless impedance d interpolates smoothly from d0 at zero
    penetration to d1 at `width_m` and stays constant beyond. Stiffness
    k(d) = k_max * d / (1 - d), so d -> 1 means a much stiffer response;
    k_max is calibrated so the reference load penetrates the full width.
    """

    d0: float = 0.85
    d1: float = 0.99
    width_m: float = 0.003
    k_max_n_per_m: float = 528.6  # full robot weight sinks width_m into the floor
    damping_ratio: float = 1.0
    contact_mass_kg: float = 4.0

    def __post_init__(self):
        if not (0.0 < self.d0 <= self.d1 < 1.0):
            raise ValueError("impedance must satisfy 0 < d0 <= d1 < 1")
        if self.width_m <= 0:
            raise ValueError("impedance width must be positive")


def calibrated_impedance(
    load_n: float,
    target_penetration_m: float,
    base: ImpedanceSpec | None = None,
    damping_ratio: float | None = None,
    contact_mass_kg: float | None = None,
) -> ImpedanceSpec:
    """Impedance whose static deflection under load_n is target_penetration_m.

    Keeps the d0/d1/width stiffening profile and solves k_max so that
    k(d(p)) * p = load at the target penetration.
    """
    base = base or ImpedanceSpec()
    d = impedance_at(target_penetration_m, base)
    k_needed = load_n / target_penetration_m
    from dataclasses import replace

    kwargs = {"k_max_n_per_m": k_needed * (1.0 - d) / d}
    if damping_ratio is not None:
        kwargs["damping_ratio"] = damping_ratio
    if contact_mass_kg is not None:
        kwargs["contact_mass_kg"] = contact_mass_kg
    return replace(base, **kwargs)


def impedance_at(penetration: float, spec: ImpedanceSpec) -> float:
    """Dimensionless impedance d(p): smoothstep d0 -> d1 over [0, width]."""
    if penetration < 0:
        raise ValueError(f"negative penetration {penetration}")
    x = penetration / spec.width_m
    if x >= 1.0:
        return spec.d1
    s = x * x * (3.0 - 2.0 * x)
    return spec.d0 + (spec.d1 - spec.d0) * s


def _stiffness(d: float, spec: ImpedanceSpec) -> float:
    return spec.k_max_n_per_m * d / (1.0 - d)


def normal_force(penetration: float, penetration_rate: float, spec: ImpedanceSpec) -> float:
    """Impedance normal force, clamped to be non-adhesive (>= 0)."""
    if penetration < 0:
        raise ValueError(f"negative penetration {penetration}")
    d = impedance_at(penetration, spec)
    k = _stiffness(d, spec)
    c = 2.0 * spec.damping_ratio * math.sqrt(k * spec.contact_mass_kg)
    return max(0.0, k * penetration + c * penetration_rate)


def contact_elastic_energy(penetration: float, spec: ImpedanceSpec, n: int = 64) -> float:
    """Elastic energy stored in the nonlinear contact spring at a penetration.

    Simpson quadrature of k(d(s)) * s over [0, p]; used by energy audits.
    """
    if penetration <= 0:
        return 0.0
    xs = np.linspace(0.0, penetration, 2 * n + 1)
    ys = np.array([_stiffness(impedance_at(float(x), spec), spec) * float(x) for x in xs])
    h = penetration / (2 * n)
    return float(h / 3.0 * (ys[0] + ys[-1] + 4 * ys[1:-1:2].sum() + 2 * ys[2:-1:2].sum()))


@dataclass
class ContactPoint:
    """One resolved contact.

    normal points from body_b toward body_a; forces stored here act on
    body_a (the reaction on body_b is the negative).
    """

    position: np.ndarray
    normal: np.ndarray
    penetration: float
    bodies: tuple[str, str]
    # Filled by the resolver:
    normal_force_n: float = 0.0
    tangential_force_n: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torsional_torque_nm: float = 0.0
    rolling_torque_nm: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.penetration < 0:
            raise ValueError("active contacts require penetration >= 0")
        n = float(np.linalg.norm(self.normal))
        if abs(n - 1.0) > 1e-9:
            raise ValueError("contact normal must be unit length")


def friction_forces(
    cp: ContactPoint,
    relative_velocity: np.ndarray,
    spec: FrictionSpec,
    normal_force_n: float,
) -> tuple[np.ndarray, float, np.ndarray]:
    """Resolve tangential / torsional / rolling friction for one contact.

    relative_velocity is a 6-vector (linear, angular) of body_a relative to
    body_b at the contact point, world frame. Returns (tangential force
    vector, spin torque about the normal, rolling resistance torque vector),
    all acting on body_a and jointly inside the elliptic cone.
    """
    if normal_force_n < 0:
        raise ValueError("normal force must be >= 0")
    v = np.asarray(relative_velocity, dtype=float)
    n = cp.normal
    v_lin, v_ang = v[:3], v[3:]

    v_t = v_lin - (v_lin @ n) * n
    slip = float(np.linalg.norm(v_t))
    f_t = np.zeros(3)
    if spec.mu_slide > 0 and slip > 0:
        f_t = -spec.mu_slide * normal_force_n * v_t / max(slip, SLIP_EPS_M_S)

    tau_s = 0.0
    tau_r = np.zeros(3)
    if spec.channels == 6:
        w_n = float(v_ang @ n)
        if spec.mu_torsion_m > 0:
            tau_s = -spec.mu_torsion_m * normal_force_n * _sat(w_n, SPIN_EPS_RAD_S)
        w_t = v_ang - w_n * n
        w_t_mag = float(np.linalg.norm(w_t))
        if spec.mu_roll_m > 0 and w_t_mag > 0:
            tau_r = -spec.mu_roll_m * normal_force_n * w_t / max(w_t_mag, SPIN_EPS_RAD_S)

    # Elliptic cone projection: per-channel forces scaled by their
    # coefficients must jointly stay within the normal force.
    q2 = 0.0
    if spec.mu_slide > 0:
        q2 += float(f_t @ f_t) / spec.mu_slide**2
    if spec.mu_torsion_m > 0:
        q2 += (tau_s / spec.mu_torsion_m) ** 2
    if spec.mu_roll_m > 0:
        q2 += float(tau_r @ tau_r) / spec.mu_roll_m**2
    q = math.sqrt(q2)
    if q > normal_force_n > 0:
        scale = normal_force_n / q
        f_t = f_t * scale
        tau_s = tau_s * scale
        tau_r = tau_r * scale
    elif q > 0 and normal_force_n == 0:
        f_t = np.zeros(3)
        tau_s = 0.0
        tau_r = np.zeros(3)

    return f_t, tau_s, tau_r


def _sat(x: float, eps: float) -> float:
    return max(-1.0, min(1.0, x / eps))


def detect_contacts(
    state,
    params: BodyParams,
    tier: str = "granular",
    margin: float = 1e-4,
) -> list[ContactPoint]:
    """Geometric contact detection for the current state.

    Returns the ball-ground contact (when the ball centre is within
    ball_radius + margin of the floor) plus one contact per penetrating
    roller (granular tier) or per wheel rim (reduced tier). Normals point
    into the first-named body.
    """
    contacts: list[ContactPoint] = []
    r = params.ball_radius_m
    p_ball = state.ball_position

    pen_ground = r - float(p_ball[2])
    if pen_ground > -margin:
        contacts.append(
            ContactPoint(
                position=np.array([p_ball[0], p_ball[1], 0.0]),
                normal=np.array([0.0, 0.0, 1.0]),
                penetration=max(0.0, pen_ground),
                bodies=("ball", "ground"),
            )
        )

    rot_t = state.torso_rotation()
    anchor_w = state.torso_position + rot_t @ params.anchor_in_torso()

    for i, fr in enumerate(params.wheel_frames()):
        if tier == "reduced":
            hub_w = anchor_w + rot_t @ fr["hub"]
            delta = hub_w - p_ball
            dist = float(np.linalg.norm(delta))
            pen = (r + params.wheel_radius_m) - dist
            if pen > 0:
                normal = delta / dist
                contacts.append(
                    ContactPoint(
                        position=p_ball + r * normal,
                        normal=normal,
                        penetration=pen,
                        bodies=(f"wheel{i}", "ball"),
                    )
                )
            continue

        # Granular tier: each roller approximated by a sphere at its current
        # ring position; at most one contact per roller.
        e2 = np.cross(fr["axis"], fr["u"])
        ring_r = params.wheel_radius_m - params.roller_radius_m
        n_roll = params.roller_count_per_wheel
        theta = float(state.wheel_angles[i])
        for k in range(n_roll):
            gamma = theta + 2.0 * math.pi * k / n_roll
            ring_dir = -math.cos(gamma) * fr["u"] + math.sin(gamma) * e2
            center_local = fr["hub"] + ring_r * ring_dir
            center_w = anchor_w + rot_t @ center_local
            delta = center_w - p_ball
            dist = float(np.linalg.norm(delta))
            pen = (r + params.roller_radius_m) - dist
            if pen > 0:
                normal = delta / dist
                contacts.append(
                    ContactPoint(
                        position=p_ball + r * normal,
                        normal=normal,
                        penetration=pen,
                        bodies=(f"wheel{i}/roller{k}", "ball"),
                    )
                )
    return contacts


__all__ = [
    "SLIP_EPS_M_S",
    "SPIN_EPS_RAD_S",
    "ContactPoint",
    "FrictionSpec",
    "ImpedanceSpec",
    "contact_elastic_energy",
    "detect_contacts",
    "friction_forces",
    "impedance_at",
    "normal_force",
]
