"""JIT-compiled stepping kernel.

The public contact/friction functions in `contact.py` are the readable
per-contact reference laws; this kernel fuses one full physics step over
packed state arrays. Integration is semi-implicit Euler in two phases:

  phase 1: all non-friction forces (gravity, impedance normal forces,
           virtual joint, motor torques) produce tentative velocities;
  phase 2: friction is resolved contact by contact from the *predicted*
           slip, as the smallest of the regularized-stiction ramp, the
           Coulomb bound, and the impulse that exactly cancels the slip
           this step (time-stepping stiction). The momentum cap is what
           keeps the stiff stiction ramp stable against the tiny wheel
           rotor and roller inertias; in the sliding regime the forces
           match the reference law exactly.

Friction channels are jointly projected into the elliptic cone. All caps
only ever shrink the removal of relative motion, so friction can stop
slip but never reverse it: stick is chatter-free and dissipation is
guaranteed.

State packing (n = roller count per wheel):
  q: [p_t(3), quat_t(4), p_b(3), quat_b(4), wheel_angles(3), roller_angles(3n)]
  v: [v_t(3), w_t(3), v_b(3), w_b(3), wheel_speeds(3), roller_speeds(3n)]
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# Physics parameter vector layout.
P_TORSO_MASS = 0
P_BALL_MASS = 1
P_BALL_INERTIA = 2
P_BALL_RADIUS = 3
P_WHEEL_RADIUS = 4
P_ROLLER_RADIUS = 5
P_ROTOR_INERTIA = 6
P_ROLLER_INERTIA = 7
P_GRAVITY = 8
P_TIER = 9  # 0 reduced, 1 granular
P_ANCHOR = 10  # 10..12
P_TORSO_INERTIA = 13  # 13..21 row-major, body frame
P_IMP_D0 = 22
P_IMP_D1 = 23
P_IMP_WIDTH = 24
P_IMP_KMAX = 25
P_IMP_ZETA = 26
P_IMP_MASS = 27
P_G_MU_SLIDE = 28
P_G_MU_TORSION = 29
P_G_MU_ROLL = 30
P_R_MU_SLIDE = 31
P_SLIP_EPS = 32
P_SPIN_EPS = 33
P_VJ_ENABLED = 34
P_VJ_K = 35
P_VJ_C = 36
P_RING_R = 37
P_N_ROLLERS = 38
P_RIMP_D0 = 39  # impedance of roller/wheel-ball contacts
P_RIMP_D1 = 40
P_RIMP_WIDTH = 41
P_RIMP_KMAX = 42
P_RIMP_ZETA = 43
P_RIMP_MASS = 44
P_VJ_REST = 45
PHYS_SIZE = 46

Q_PT = 0
Q_QT = 3
Q_PB = 7
Q_QB = 10
Q_WHEEL = 14
Q_ROLLER = 17
V_VT = 0
V_WT = 3
V_VB = 6
V_WB = 9
V_WHEEL = 12
V_ROLLER = 15

# Per-contact record layout for the phase-2 pass.
C_WHEEL = 0  # wheel index, -1 for the ground contact
C_ROLLER = 1  # roller index, -1 on the reduced tier / ground
C_NX, C_NY, C_NZ = 2, 3, 4
C_PX, C_PY, C_PZ = 5, 6, 7  # contact point
C_NF = 8
C_HX, C_HY, C_HZ = 9, 10, 11  # hub (world)
C_AX, C_AY, C_AZ = 12, 13, 14  # wheel axis (world)
C_RX, C_RY, C_RZ = 15, 16, 17  # roller centre (world)
C_SX, C_SY, C_SZ = 18, 19, 20  # roller spin axis (world)
C_D1X, C_D1Y, C_D1Z = 21, 22, 23  # tangent basis (drive direction)
C_D2X, C_D2Y, C_D2Z = 24, 25, 26  # tangent basis (complement)
C_K11, C_K12, C_K22 = 27, 28, 29  # tangential effective-mass entries
C_CAP = 30  # tangential impulse bound (ramp and Coulomb, this step)
C_A1, C_A2 = 31, 32  # accumulated tangential impulse
C_ASPIN = 33  # accumulated torsional impulse (ground)
C_AR1, C_AR2 = 34, 35  # accumulated rolling impulse (ground)
C_ACTIVE = 36
C_SIZE = 37

FRICTION_SWEEPS = 4


@njit(cache=True)
def _quat_to_mat(q, out):
    w, x, y, z = q[0], q[1], q[2], q[3]
    out[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[0, 1] = 2.0 * (x * y - z * w)
    out[0, 2] = 2.0 * (x * z + y * w)
    out[1, 0] = 2.0 * (x * y + z * w)
    out[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[1, 2] = 2.0 * (y * z - x * w)
    out[2, 0] = 2.0 * (x * z - y * w)
    out[2, 1] = 2.0 * (y * z + x * w)
    out[2, 2] = 1.0 - 2.0 * (x * x + y * y)


@njit(cache=True)
def _quat_step(q, wx, wy, wz, dt, out):
    mag = math.sqrt(wx * wx + wy * wy + wz * wz)
    if mag * dt < 1e-12:
        out[0], out[1], out[2], out[3] = q[0], q[1], q[2], q[3]
    else:
        half = 0.5 * mag * dt
        s = math.sin(half) / mag
        dw, dx, dy, dz = math.cos(half), wx * s, wy * s, wz * s
        w2, x2, y2, z2 = q[0], q[1], q[2], q[3]
        out[0] = dw * w2 - dx * x2 - dy * y2 - dz * z2
        out[1] = dw * x2 + dx * w2 + dy * z2 - dz * y2
        out[2] = dw * y2 - dx * z2 + dy * w2 + dz * x2
        out[3] = dw * z2 + dx * y2 - dy * x2 + dz * w2
    n = math.sqrt(out[0] ** 2 + out[1] ** 2 + out[2] ** 2 + out[3] ** 2)
    if n > 1e-12:
        out[0] /= n
        out[1] /= n
        out[2] /= n
        out[3] /= n
    else:
        out[0], out[1], out[2], out[3] = 1.0, 0.0, 0.0, 0.0


@njit(cache=True, inline="always")
def _normal_force_implicit(pen, pen_rate, kappa_n, dt, d0, d1, width, kmax, zeta, cmass):
    """Impedance normal force, solved implicitly against the step.

    The stiffness profile matches the reference law; the linear part is
    evaluated at the end-of-step penetration implied by the force itself,
    which keeps under-resolved impacts (a roller sweeping into contact
    between steps) from bouncing with spurious energy:

        f = [k (p + dt pdot) + c pdot] / (1 + kappa_n dt (c + k dt))
    """
    x = pen / width
    if x >= 1.0:
        d = d1
    else:
        s = x * x * (3.0 - 2.0 * x)
        d = d0 + (d1 - d0) * s
    k = kmax * d / (1.0 - d)
    c = 2.0 * zeta * math.sqrt(k * cmass)
    f = (k * (pen + dt * pen_rate) + c * pen_rate) / (1.0 + kappa_n * dt * (c + k * dt))
    return f if f > 0.0 else 0.0


@njit(cache=True, inline="always")
def _mat3_inv(a, out):
    det = (
        a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
        - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
        + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0])
    )
    if det == 0.0 or not math.isfinite(det):
        return False
    inv_det = 1.0 / det
    out[0, 0] = (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1]) * inv_det
    out[0, 1] = (a[0, 2] * a[2, 1] - a[0, 1] * a[2, 2]) * inv_det
    out[0, 2] = (a[0, 1] * a[1, 2] - a[0, 2] * a[1, 1]) * inv_det
    out[1, 0] = (a[1, 2] * a[2, 0] - a[1, 0] * a[2, 2]) * inv_det
    out[1, 1] = (a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]) * inv_det
    out[1, 2] = (a[0, 2] * a[1, 0] - a[0, 0] * a[1, 2]) * inv_det
    out[2, 0] = (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]) * inv_det
    out[2, 1] = (a[0, 1] * a[2, 0] - a[0, 0] * a[2, 1]) * inv_det
    out[2, 2] = (a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]) * inv_det
    return True


@njit(cache=True)
def _dir_kappa(da, db, con, pos, phys, iw_inv, with_roller):
    """d(slip along da)/d(impulse along db): effective-mass matrix entry."""
    m_t = phys[P_TORSO_MASS]
    m_b = phys[P_BALL_MASS]
    i_b = phys[P_BALL_INERTIA]
    i_rot = phys[P_ROTOR_INERTIA]
    i_rol = phys[P_ROLLER_INERTIA]
    cx, cy, cz = con[C_PX], con[C_PY], con[C_PZ]
    bcx, bcy, bcz = cx - pos[3], cy - pos[4], cz - pos[5]
    rcx, rcy, rcz = cx - pos[0], cy - pos[1], cz - pos[2]
    hcx, hcy, hcz = cx - con[C_HX], cy - con[C_HY], cz - con[C_HZ]
    axx, axy, axz = con[C_AX], con[C_AY], con[C_AZ]

    dad = da[0] * db[0] + da[1] * db[1] + da[2] * db[2]
    kappa = dad / m_t + dad / m_b

    lbax = bcy * da[2] - bcz * da[1]
    lbay = bcz * da[0] - bcx * da[2]
    lbaz = bcx * da[1] - bcy * da[0]
    lbbx = bcy * db[2] - bcz * db[1]
    lbby = bcz * db[0] - bcx * db[2]
    lbbz = bcx * db[1] - bcy * db[0]
    kappa += (lbax * lbbx + lbay * lbby + lbaz * lbbz) / i_b

    ltax = rcy * da[2] - rcz * da[1]
    ltay = rcz * da[0] - rcx * da[2]
    ltaz = rcx * da[1] - rcy * da[0]
    ltbx = rcy * db[2] - rcz * db[1]
    ltby = rcz * db[0] - rcx * db[2]
    ltbz = rcx * db[1] - rcy * db[0]
    g_wa = (hcy * da[2] - hcz * da[1]) * axx + (hcz * da[0] - hcx * da[2]) * axy + (hcx * da[1] - hcy * da[0]) * axz
    g_wb = (hcy * db[2] - hcz * db[1]) * axx + (hcz * db[0] - hcx * db[2]) * axy + (hcx * db[1] - hcy * db[0]) * axz
    g_ra, g_rb = 0.0, 0.0
    sxx, sxy, sxz = 0.0, 0.0, 0.0
    if with_roller:
        sxx, sxy, sxz = con[C_SX], con[C_SY], con[C_SZ]
        ccx, ccy, ccz = cx - con[C_RX], cy - con[C_RY], cz - con[C_RZ]
        g_ra = (ccy * da[2] - ccz * da[1]) * sxx + (ccz * da[0] - ccx * da[2]) * sxy + (ccx * da[1] - ccy * da[0]) * sxz
        g_rb = (ccy * db[2] - ccz * db[1]) * sxx + (ccz * db[0] - ccx * db[2]) * sxy + (ccx * db[1] - ccy * db[0]) * sxz
    # Torso rotation sees the moment minus the parts flowing into rotors.
    lrbx = ltbx - g_wb * axx - g_rb * sxx
    lrby = ltby - g_wb * axy - g_rb * sxy
    lrbz = ltbz - g_wb * axz - g_rb * sxz
    tix = iw_inv[0, 0] * lrbx + iw_inv[0, 1] * lrby + iw_inv[0, 2] * lrbz
    tiy = iw_inv[1, 0] * lrbx + iw_inv[1, 1] * lrby + iw_inv[1, 2] * lrbz
    tiz = iw_inv[2, 0] * lrbx + iw_inv[2, 1] * lrby + iw_inv[2, 2] * lrbz
    kappa += ltax * tix + ltay * tiy + ltaz * tiz
    kappa += g_wa * g_wb / i_rot
    if with_roller:
        kappa += g_ra * g_rb / i_rol
    return kappa


@njit(cache=True)
def _apply_wheel_impulse(v, imp, con, pos, phys, iw_inv, granular):
    """Apply a friction impulse (on the wheel side, at the contact)."""
    n_rollers = int(phys[P_N_ROLLERS])
    m_t = phys[P_TORSO_MASS]
    m_b = phys[P_BALL_MASS]
    i_b = phys[P_BALL_INERTIA]
    px, py, pz = imp[0], imp[1], imp[2]
    i = int(con[C_WHEEL])
    k = int(con[C_ROLLER])
    cx, cy, cz = con[C_PX], con[C_PY], con[C_PZ]
    bcx, bcy, bcz = cx - pos[3], cy - pos[4], cz - pos[5]
    rcx, rcy, rcz = cx - pos[0], cy - pos[1], cz - pos[2]
    hcx, hcy, hcz = cx - con[C_HX], cy - con[C_HY], cz - con[C_HZ]
    axx, axy, axz = con[C_AX], con[C_AY], con[C_AZ]

    v[V_VT] += px / m_t
    v[V_VT + 1] += py / m_t
    v[V_VT + 2] += pz / m_t
    v[V_VB] -= px / m_b
    v[V_VB + 1] -= py / m_b
    v[V_VB + 2] -= pz / m_b
    v[V_WB] -= (bcy * pz - bcz * py) / i_b
    v[V_WB + 1] -= (bcz * px - bcx * pz) / i_b
    v[V_WB + 2] -= (bcx * py - bcy * px) / i_b
    # Moment split between rotors and torso.
    mx = rcy * pz - rcz * py
    my = rcz * px - rcx * pz
    mz = rcx * py - rcy * px
    g_w = (hcy * pz - hcz * py) * axx + (hcz * px - hcx * pz) * axy + (hcx * py - hcy * px) * axz
    v[V_WHEEL + i] += g_w / phys[P_ROTOR_INERTIA]
    mx -= g_w * axx
    my -= g_w * axy
    mz -= g_w * axz
    if granular and k >= 0:
        sxx, sxy, sxz = con[C_SX], con[C_SY], con[C_SZ]
        ccx, ccy, ccz = cx - con[C_RX], cy - con[C_RY], cz - con[C_RZ]
        g_r = (ccy * pz - ccz * py) * sxx + (ccz * px - ccx * pz) * sxy + (ccx * py - ccy * px) * sxz
        v[V_ROLLER + i * n_rollers + k] += g_r / phys[P_ROLLER_INERTIA]
        mx -= g_r * sxx
        my -= g_r * sxy
        mz -= g_r * sxz
    v[V_WT] += iw_inv[0, 0] * mx + iw_inv[0, 1] * my + iw_inv[0, 2] * mz
    v[V_WT + 1] += iw_inv[1, 0] * mx + iw_inv[1, 1] * my + iw_inv[1, 2] * mz
    v[V_WT + 2] += iw_inv[2, 0] * mx + iw_inv[2, 1] * my + iw_inv[2, 2] * mz


@njit(cache=True)
def _wheel_slip(con, v, phys, pos, granular):
    """Tangential slip components along the contact's stored basis."""
    n_rollers = int(phys[P_N_ROLLERS])
    i = int(con[C_WHEEL])
    k = int(con[C_ROLLER])
    comx, comy, comz = pos[0], pos[1], pos[2]
    pbx, pby, pbz = pos[3], pos[4], pos[5]
    cx, cy, cz = con[C_PX], con[C_PY], con[C_PZ]
    axx, axy, axz = con[C_AX], con[C_AY], con[C_AZ]

    rcx, rcy, rcz = cx - comx, cy - comy, cz - comz
    vax = v[V_VT] + v[V_WT + 1] * rcz - v[V_WT + 2] * rcy
    vay = v[V_VT + 1] + v[V_WT + 2] * rcx - v[V_WT] * rcz
    vaz = v[V_VT + 2] + v[V_WT] * rcy - v[V_WT + 1] * rcx
    hcx, hcy, hcz = cx - con[C_HX], cy - con[C_HY], cz - con[C_HZ]
    w_sp = v[V_WHEEL + i]
    vax += w_sp * (axy * hcz - axz * hcy)
    vay += w_sp * (axz * hcx - axx * hcz)
    vaz += w_sp * (axx * hcy - axy * hcx)
    if granular and k >= 0:
        r_sp = v[V_ROLLER + i * n_rollers + k]
        ccx, ccy, ccz = cx - con[C_RX], cy - con[C_RY], cz - con[C_RZ]
        sxx, sxy, sxz = con[C_SX], con[C_SY], con[C_SZ]
        vax += r_sp * (sxy * ccz - sxz * ccy)
        vay += r_sp * (sxz * ccx - sxx * ccz)
        vaz += r_sp * (sxx * ccy - sxy * ccx)

    bcx, bcy, bcz = cx - pbx, cy - pby, cz - pbz
    vbx_ = v[V_VB] + v[V_WB + 1] * bcz - v[V_WB + 2] * bcy
    vby_ = v[V_VB + 1] + v[V_WB + 2] * bcx - v[V_WB] * bcz
    vbz_ = v[V_VB + 2] + v[V_WB] * bcy - v[V_WB + 1] * bcx

    relx, rely, relz = vax - vbx_, vay - vby_, vaz - vbz_
    s1 = relx * con[C_D1X] + rely * con[C_D1Y] + relz * con[C_D1Z]
    s2 = relx * con[C_D2X] + rely * con[C_D2Y] + relz * con[C_D2Z]
    return s1, s2


@njit(cache=True)
def _prep_wheel_contact(con, v, phys, iw_inv, dt, granular, pos):
    """Build the tangent basis, effective masses and impulse bound."""
    con[C_ACTIVE] = 0.0
    nf = con[C_NF]
    mu = phys[P_R_MU_SLIDE]
    if nf <= 0.0 or mu <= 0.0:
        return
    k = int(con[C_ROLLER])
    with_roller = granular and k >= 0
    nx, ny, nz = con[C_NX], con[C_NY], con[C_NZ]
    cx, cy, cz = con[C_PX], con[C_PY], con[C_PZ]
    hcx, hcy, hcz = cx - con[C_HX], cy - con[C_HY], cz - con[C_HZ]
    axx, axy, axz = con[C_AX], con[C_AY], con[C_AZ]

    # Basis: drive direction (tangent-projected), complement.
    d1 = np.empty(3)
    d1[0] = axy * hcz - axz * hcy
    d1[1] = axz * hcx - axx * hcz
    d1[2] = axx * hcy - axy * hcx
    dd = d1[0] * nx + d1[1] * ny + d1[2] * nz
    d1[0] -= dd * nx
    d1[1] -= dd * ny
    d1[2] -= dd * nz
    d1n = math.sqrt(d1[0] ** 2 + d1[1] ** 2 + d1[2] ** 2)
    if d1n < 1e-12:
        return
    d1 /= d1n
    d2 = np.empty(3)
    d2[0] = ny * d1[2] - nz * d1[1]
    d2[1] = nz * d1[0] - nx * d1[2]
    d2[2] = nx * d1[1] - ny * d1[0]
    con[C_D1X], con[C_D1Y], con[C_D1Z] = d1[0], d1[1], d1[2]
    con[C_D2X], con[C_D2Y], con[C_D2Z] = d2[0], d2[1], d2[2]

    k11 = _dir_kappa(d1, d1, con, pos, phys, iw_inv, with_roller)
    k22 = _dir_kappa(d2, d2, con, pos, phys, iw_inv, with_roller)
    k12 = _dir_kappa(d1, d2, con, pos, phys, iw_inv, with_roller)
    con[C_K11], con[C_K12], con[C_K22] = k11, k12, k22

    s1, s2 = _wheel_slip(con, v, phys, pos, granular)
    smag = math.sqrt(s1 * s1 + s2 * s2)
    # Impulse bound for the whole step: Coulomb disc, shrunk by the
    # stiction ramp when the predicted slip is inside the regularization
    # band (mirrors the reference force law).
    ramp = mu * nf * smag / phys[P_SLIP_EPS]
    bound = mu * nf
    if ramp < bound:
        bound = ramp
    con[C_CAP] = bound * dt
    con[C_A1] = 0.0
    con[C_A2] = 0.0
    if con[C_CAP] > 0.0:
        con[C_ACTIVE] = 1.0


@njit(cache=True)
def _sweep_wheel_contact(con, v, phys, iw_inv, dt, granular, pos):
    """One projected Gauss-Seidel sweep on a wheel/roller-ball contact."""
    k = int(con[C_ROLLER])
    with_roller = granular and k >= 0
    s1, s2 = _wheel_slip(con, v, phys, pos, granular)
    k11, k12, k22 = con[C_K11], con[C_K12], con[C_K22]
    det = k11 * k22 - k12 * k12
    if with_roller and det > 1e-12 * k11 * k22:
        dp1 = -(k22 * s1 - k12 * s2) / det
        dp2 = -(k11 * s2 - k12 * s1) / det
    else:
        dp1 = -s1 / k11 if k11 > 0.0 else 0.0
        dp2 = (-s2 / k22 if k22 > 0.0 else 0.0) if with_roller else 0.0

    p1 = con[C_A1] + dp1
    p2 = con[C_A2] + dp2
    pmag = math.sqrt(p1 * p1 + p2 * p2)
    cap = con[C_CAP]
    if pmag > cap and pmag > 0.0:
        sc = cap / pmag
        p1 *= sc
        p2 *= sc
    inc1 = p1 - con[C_A1]
    inc2 = p2 - con[C_A2]
    if inc1 == 0.0 and inc2 == 0.0:
        return
    con[C_A1] = p1
    con[C_A2] = p2
    imp = np.empty(3)
    imp[0] = inc1 * con[C_D1X] + inc2 * con[C_D2X]
    imp[1] = inc1 * con[C_D1Y] + inc2 * con[C_D2Y]
    imp[2] = inc1 * con[C_D1Z] + inc2 * con[C_D2Z]
    _apply_wheel_impulse(v, imp, con, pos, phys, iw_inv, granular)


@njit(cache=True)
def _prep_ground_contact(con, v, phys, dt):
    """Impulse bounds for the six-channel ball-ground contact."""
    con[C_ACTIVE] = 0.0
    nf = con[C_NF]
    if nf <= 0.0:
        return
    r_ball = phys[P_BALL_RADIUS]
    # Tangent basis is the world horizontal plane.
    sx = v[V_VB] - v[V_WB + 1] * r_ball
    sy = v[V_VB + 1] + v[V_WB] * r_ball
    smag = math.sqrt(sx * sx + sy * sy)
    mu_s = phys[P_G_MU_SLIDE]
    ramp = mu_s * nf * smag / phys[P_SLIP_EPS]
    cap_t = mu_s * nf
    if ramp < cap_t:
        cap_t = ramp
    con[C_CAP] = cap_t * dt
    wn = abs(v[V_WB + 2])
    mu_t = phys[P_G_MU_TORSION]
    cap_s = mu_t * nf
    ramp_s = mu_t * nf * wn / phys[P_SPIN_EPS]
    if ramp_s < cap_s:
        cap_s = ramp_s
    con[C_K11] = cap_s * dt  # reuse slots for spin/roll bounds
    wr = math.sqrt(v[V_WB] ** 2 + v[V_WB + 1] ** 2)
    mu_r = phys[P_G_MU_ROLL]
    cap_r = mu_r * nf
    ramp_r = mu_r * nf * wr / phys[P_SPIN_EPS]
    if ramp_r < cap_r:
        cap_r = ramp_r
    con[C_K22] = cap_r * dt
    con[C_A1] = 0.0
    con[C_A2] = 0.0
    con[C_ASPIN] = 0.0
    con[C_AR1] = 0.0
    con[C_AR2] = 0.0
    con[C_ACTIVE] = 1.0


@njit(cache=True)
def _sweep_ground_contact(con, v, phys, dt):
    """One projected sweep on the ball-ground contact (all channels)."""
    m_b = phys[P_BALL_MASS]
    i_b = phys[P_BALL_INERTIA]
    r_ball = phys[P_BALL_RADIUS]
    nf = con[C_NF]
    mu_s = phys[P_G_MU_SLIDE]
    mu_t = phys[P_G_MU_TORSION]
    mu_r = phys[P_G_MU_ROLL]

    # Exact-stop increments per channel.
    kappa_t = 1.0 / m_b + r_ball * r_ball / i_b
    sx = v[V_VB] - v[V_WB + 1] * r_ball
    sy = v[V_VB + 1] + v[V_WB] * r_ball
    p1 = con[C_A1] - sx / kappa_t
    p2 = con[C_A2] - sy / kappa_t
    ps = con[C_ASPIN] - v[V_WB + 2] * i_b
    pr1 = con[C_AR1] - v[V_WB] * i_b
    pr2 = con[C_AR2] - v[V_WB + 1] * i_b

    # Per-channel bounds, then a joint elliptic projection.
    cap_t, cap_s, cap_r = con[C_CAP], con[C_K11], con[C_K22]
    tm = math.sqrt(p1 * p1 + p2 * p2)
    if tm > cap_t and tm > 0.0:
        sc = cap_t / tm
        p1 *= sc
        p2 *= sc
    if abs(ps) > cap_s:
        ps = cap_s if ps > 0.0 else -cap_s
    rm = math.sqrt(pr1 * pr1 + pr2 * pr2)
    if rm > cap_r and rm > 0.0:
        sc = cap_r / rm
        pr1 *= sc
        pr2 *= sc
    q2 = 0.0
    if mu_s > 0.0:
        q2 += (p1 * p1 + p2 * p2) / (mu_s * mu_s)
    if mu_t > 0.0:
        q2 += (ps / mu_t) ** 2
    if mu_r > 0.0:
        q2 += (pr1 * pr1 + pr2 * pr2) / (mu_r * mu_r)
    qn = math.sqrt(q2)
    lim = nf * dt
    if qn > lim and qn > 0.0:
        sc = lim / qn
        p1 *= sc
        p2 *= sc
        ps *= sc
        pr1 *= sc
        pr2 *= sc

    i1 = p1 - con[C_A1]
    i2 = p2 - con[C_A2]
    is_ = ps - con[C_ASPIN]
    ir1 = pr1 - con[C_AR1]
    ir2 = pr2 - con[C_AR2]
    con[C_A1], con[C_A2], con[C_ASPIN], con[C_AR1], con[C_AR2] = p1, p2, ps, pr1, pr2

    v[V_VB] += i1 / m_b
    v[V_VB + 1] += i2 / m_b
    # Moments: force at the floor point plus spin/roll torque impulses.
    v[V_WB] += (r_ball * i2 + ir1) / i_b
    v[V_WB + 1] += (-r_ball * i1 + ir2) / i_b
    v[V_WB + 2] += is_ / i_b


@njit(cache=True)
def step_kernel(q, v, tau_cmd, dt, phys, g_u, g_axis, g_e2, g_hub, roller_phase, q_out, v_out):
    """One physics step. Returns 0 on success, 1 on non-finite output."""
    m_t = phys[P_TORSO_MASS]
    m_b = phys[P_BALL_MASS]
    i_b = phys[P_BALL_INERTIA]
    r_ball = phys[P_BALL_RADIUS]
    grav = phys[P_GRAVITY]
    granular = phys[P_TIER] > 0.5
    n_rollers = int(phys[P_N_ROLLERS])

    rot = np.empty((3, 3))
    _quat_to_mat(q[Q_QT : Q_QT + 4], rot)

    comx, comy, comz = q[Q_PT], q[Q_PT + 1], q[Q_PT + 2]
    pbx, pby, pbz = q[Q_PB], q[Q_PB + 1], q[Q_PB + 2]
    vtx, vty, vtz = v[V_VT], v[V_VT + 1], v[V_VT + 2]
    wtx, wty, wtz = v[V_WT], v[V_WT + 1], v[V_WT + 2]
    vbx, vby, vbz = v[V_VB], v[V_VB + 1], v[V_VB + 2]
    wbx, wby, wbz = v[V_WB], v[V_WB + 1], v[V_WB + 2]

    # Torso world inertia and inverse, needed for contact effective masses.
    ib1 = np.empty((3, 3))
    for a in range(3):
        for b in range(3):
            ib1[a, b] = phys[P_TORSO_INERTIA + 3 * a + b]
    tmp1 = np.empty((3, 3))
    for a in range(3):
        for b in range(3):
            tmp1[a, b] = rot[a, 0] * ib1[0, b] + rot[a, 1] * ib1[1, b] + rot[a, 2] * ib1[2, b]
    iw1 = np.empty((3, 3))
    for a in range(3):
        for b in range(3):
            iw1[a, b] = tmp1[a, 0] * rot[b, 0] + tmp1[a, 1] * rot[b, 1] + tmp1[a, 2] * rot[b, 2]
    iw_inv1 = np.empty((3, 3))
    if not _mat3_inv(iw1, iw_inv1):
        return 1
    pos1 = np.empty(6)
    pos1[0], pos1[1], pos1[2] = comx, comy, comz
    pos1[3], pos1[4], pos1[5] = pbx, pby, pbz

    # ---- phase 1: non-friction forces --------------------------------------
    f_tx, f_ty, f_tz = 0.0, 0.0, -grav * m_t
    t_tx, t_ty, t_tz = 0.0, 0.0, 0.0
    f_bx, f_by, f_bz = 0.0, 0.0, -grav * m_b
    t_bx, t_by, t_bz = 0.0, 0.0, 0.0
    sp_x, sp_y, sp_z = 0.0, 0.0, 0.0
    tau_wheel = np.empty(3)
    for i in range(3):
        tau_wheel[i] = tau_cmd[i]
    tau_roller = np.zeros(3 * n_rollers)

    contacts = np.zeros((1 + 3 * n_rollers, C_SIZE))
    n_con = 0

    # Ball-ground contact: normal force here, friction in phase 2.
    pen_g = r_ball - pbz
    ground_nf = 0.0
    if pen_g > 0.0:
        ground_nf = _normal_force_implicit(
            pen_g, -vbz, 1.0 / m_b, dt,
            phys[P_IMP_D0], phys[P_IMP_D1], phys[P_IMP_WIDTH],
            phys[P_IMP_KMAX], phys[P_IMP_ZETA], phys[P_IMP_MASS],
        )
        f_bz += ground_nf
        con = contacts[n_con]
        con[C_WHEEL] = -1.0
        con[C_ROLLER] = -1.0
        con[C_NZ] = 1.0
        con[C_PX], con[C_PY], con[C_PZ] = pbx, pby, 0.0
        con[C_NF] = ground_nf
        n_con += 1

    ax = comx + rot[0, 0] * phys[P_ANCHOR] + rot[0, 1] * phys[P_ANCHOR + 1] + rot[0, 2] * phys[P_ANCHOR + 2]
    ay = comy + rot[1, 0] * phys[P_ANCHOR] + rot[1, 1] * phys[P_ANCHOR + 1] + rot[1, 2] * phys[P_ANCHOR + 2]
    az = comz + rot[2, 0] * phys[P_ANCHOR] + rot[2, 1] * phys[P_ANCHOR + 1] + rot[2, 2] * phys[P_ANCHOR + 2]

    axis_w = np.empty((3, 3))
    hub_w = np.empty((3, 3))
    for i in range(3):
        for a in range(3):
            axis_w[i, a] = rot[a, 0] * g_axis[i, 0] + rot[a, 1] * g_axis[i, 1] + rot[a, 2] * g_axis[i, 2]
        hub_w[i, 0] = ax + rot[0, 0] * g_hub[i, 0] + rot[0, 1] * g_hub[i, 1] + rot[0, 2] * g_hub[i, 2]
        hub_w[i, 1] = ay + rot[1, 0] * g_hub[i, 0] + rot[1, 1] * g_hub[i, 1] + rot[1, 2] * g_hub[i, 2]
        hub_w[i, 2] = az + rot[2, 0] * g_hub[i, 0] + rot[2, 1] * g_hub[i, 1] + rot[2, 2] * g_hub[i, 2]

    touch_reduced = r_ball + phys[P_WHEEL_RADIUS]
    touch_gran = r_ball + phys[P_ROLLER_RADIUS]
    ring_r = phys[P_RING_R]

    for i in range(3):
        hubx, huby, hubz = hub_w[i, 0], hub_w[i, 1], hub_w[i, 2]
        axx, axy, axz = axis_w[i, 0], axis_w[i, 1], axis_w[i, 2]
        w_speed = v[V_WHEEL + i]

        if not granular:
            dxx, dxy, dxz = hubx - pbx, huby - pby, hubz - pbz
            dist = math.sqrt(dxx * dxx + dxy * dxy + dxz * dxz)
            pen = touch_reduced - dist
            if pen <= 0.0:
                continue
            nx, ny, nz = dxx / dist, dxy / dist, dxz / dist
            cx, cy, cz = pbx + r_ball * nx, pby + r_ball * ny, pbz + r_ball * nz
            rxx, rxy, rxz = hubx - comx, huby - comy, hubz - comz
            vhx = vtx + wty * rxz - wtz * rxy
            vhy = vty + wtz * rxx - wtx * rxz
            vhz = vtz + wtx * rxy - wty * rxx
            pen_rate = -(nx * (vhx - vbx) + ny * (vhy - vby) + nz * (vhz - vbz))
            con = contacts[n_con]
            con[C_WHEEL] = float(i)
            con[C_ROLLER] = -1.0
            con[C_NX], con[C_NY], con[C_NZ] = nx, ny, nz
            con[C_PX], con[C_PY], con[C_PZ] = cx, cy, cz
            con[C_HX], con[C_HY], con[C_HZ] = hubx, huby, hubz
            con[C_AX], con[C_AY], con[C_AZ] = axx, axy, axz
            nvec = np.empty(3)
            nvec[0], nvec[1], nvec[2] = nx, ny, nz
            kappa_n = _dir_kappa(nvec, nvec, con, pos1, phys, iw_inv1, False)
            nf = _normal_force_implicit(
                pen, pen_rate, kappa_n, dt,
                phys[P_RIMP_D0], phys[P_RIMP_D1], phys[P_RIMP_WIDTH],
                phys[P_RIMP_KMAX], phys[P_RIMP_ZETA], phys[P_RIMP_MASS],
            )
            if nf <= 0.0:
                continue
            con[C_NF] = nf
            fx, fy, fz = nf * nx, nf * ny, nf * nz
            f_tx += fx
            f_ty += fy
            f_tz += fz
            rcx, rcy, rcz = cx - comx, cy - comy, cz - comz
            t_tx += rcy * fz - rcz * fy
            t_ty += rcz * fx - rcx * fz
            t_tz += rcx * fy - rcy * fx
            f_bx -= fx
            f_by -= fy
            f_bz -= fz
            bcx, bcy, bcz = cx - pbx, cy - pby, cz - pbz
            t_bx -= bcy * fz - bcz * fy
            t_by -= bcz * fx - bcx * fz
            t_bz -= bcx * fy - bcy * fx
            n_con += 1
        else:
            uxw = rot[0, 0] * g_u[i, 0] + rot[0, 1] * g_u[i, 1] + rot[0, 2] * g_u[i, 2]
            uyw = rot[1, 0] * g_u[i, 0] + rot[1, 1] * g_u[i, 1] + rot[1, 2] * g_u[i, 2]
            uzw = rot[2, 0] * g_u[i, 0] + rot[2, 1] * g_u[i, 1] + rot[2, 2] * g_u[i, 2]
            e2x = rot[0, 0] * g_e2[i, 0] + rot[0, 1] * g_e2[i, 1] + rot[0, 2] * g_e2[i, 2]
            e2y = rot[1, 0] * g_e2[i, 0] + rot[1, 1] * g_e2[i, 1] + rot[1, 2] * g_e2[i, 2]
            e2z = rot[2, 0] * g_e2[i, 0] + rot[2, 1] * g_e2[i, 1] + rot[2, 2] * g_e2[i, 2]
            theta = q[Q_WHEEL + i]
            for k in range(n_rollers):
                gamma = theta + roller_phase[k]
                cg = math.cos(gamma)
                sg = math.sin(gamma)
                rcwx = hubx + ring_r * (-cg * uxw + sg * e2x)
                rcwy = huby + ring_r * (-cg * uyw + sg * e2y)
                rcwz = hubz + ring_r * (-cg * uzw + sg * e2z)
                dxx, dxy, dxz = rcwx - pbx, rcwy - pby, rcwz - pbz
                dist = math.sqrt(dxx * dxx + dxy * dxy + dxz * dxz)
                pen = touch_gran - dist
                if pen <= 0.0:
                    continue
                nx, ny, nz = dxx / dist, dxy / dist, dxz / dist
                cx, cy, cz = pbx + r_ball * nx, pby + r_ball * ny, pbz + r_ball * nz
                rrx, rry, rrz = rcwx - comx, rcwy - comy, rcwz - comz
                vrcx = vtx + wty * rrz - wtz * rry
                vrcy = vty + wtz * rrx - wtx * rrz
                vrcz = vtz + wtx * rry - wty * rrx
                hrx, hry, hrz = rcwx - hubx, rcwy - huby, rcwz - hubz
                vrcx += w_speed * (axy * hrz - axz * hry)
                vrcy += w_speed * (axz * hrx - axx * hrz)
                vrcz += w_speed * (axx * hry - axy * hrx)
                pen_rate = -(nx * (vrcx - vbx) + ny * (vrcy - vby) + nz * (vrcz - vbz))
                con = contacts[n_con]
                con[C_WHEEL] = float(i)
                con[C_ROLLER] = float(k)
                con[C_NX], con[C_NY], con[C_NZ] = nx, ny, nz
                con[C_PX], con[C_PY], con[C_PZ] = cx, cy, cz
                con[C_HX], con[C_HY], con[C_HZ] = hubx, huby, hubz
                con[C_AX], con[C_AY], con[C_AZ] = axx, axy, axz
                con[C_RX], con[C_RY], con[C_RZ] = rcwx, rcwy, rcwz
                con[C_SX], con[C_SY], con[C_SZ] = (
                    sg * uxw + cg * e2x,
                    sg * uyw + cg * e2y,
                    sg * uzw + cg * e2z,
                )
                nvec = np.empty(3)
                nvec[0], nvec[1], nvec[2] = nx, ny, nz
                kappa_n = _dir_kappa(nvec, nvec, con, pos1, phys, iw_inv1, True)
                nf = _normal_force_implicit(
                    pen, pen_rate, kappa_n, dt,
                    phys[P_RIMP_D0], phys[P_RIMP_D1], phys[P_RIMP_WIDTH],
                    phys[P_RIMP_KMAX], phys[P_RIMP_ZETA], phys[P_RIMP_MASS],
                )
                if nf <= 0.0:
                    continue
                con[C_NF] = nf
                fx, fy, fz = nf * nx, nf * ny, nf * nz
                f_tx += fx
                f_ty += fy
                f_tz += fz
                rcx2, rcy2, rcz2 = cx - comx, cy - comy, cz - comz
                mx = rcy2 * fz - rcz2 * fy
                my = rcz2 * fx - rcx2 * fz
                mz = rcx2 * fy - rcy2 * fx
                hcx, hcy, hcz = cx - hubx, cy - huby, cz - hubz
                tau_ax = (hcy * fz - hcz * fy) * axx + (hcz * fx - hcx * fz) * axy + (hcx * fy - hcy * fx) * axz
                tau_wheel[i] += tau_ax
                sp_x += tau_ax * axx
                sp_y += tau_ax * axy
                sp_z += tau_ax * axz
                t_tx += mx
                t_ty += my
                t_tz += mz
                f_bx -= fx
                f_by -= fy
                f_bz -= fz
                bcx, bcy, bcz = cx - pbx, cy - pby, cz - pbz
                t_bx -= bcy * fz - bcz * fy
                t_by -= bcz * fx - bcx * fz
                t_bz -= bcx * fy - bcy * fx
                n_con += 1

    # Virtual joint (translation-only spring-damper).
    if phys[P_VJ_ENABLED] > 0.5:
        rest = phys[P_VJ_REST]
        avx = ax + rot[0, 2] * rest
        avy = ay + rot[1, 2] * rest
        avz = az + rot[2, 2] * rest
        armx, army, armz = avx - comx, avy - comy, avz - comz
        dispx, dispy, dispz = avx - pbx, avy - pby, avz - pbz
        vrelx = vtx + wty * armz - wtz * army - vbx
        vrely = vty + wtz * armx - wtx * armz - vby
        vrelz = vtz + wtx * army - wty * armx - vbz
        kf, cf = phys[P_VJ_K], phys[P_VJ_C]
        fx = -kf * dispx - cf * vrelx
        fy = -kf * dispy - cf * vrely
        fz = -kf * dispz - cf * vrelz
        f_tx += fx
        f_ty += fy
        f_tz += fz
        t_tx += army * fz - armz * fy
        t_ty += armz * fx - armx * fz
        t_tz += armx * fy - army * fx
        f_bx -= fx
        f_by -= fy
        f_bz -= fz

    # Motor torques spin the rotors; the commanded part of the rotor
    # angular-momentum flow is subtracted from the torso with the rest.
    for i in range(3):
        sp_x += tau_cmd[i] * axis_w[i, 0]
        sp_y += tau_cmd[i] * axis_w[i, 1]
        sp_z += tau_cmd[i] * axis_w[i, 2]

    # ---- tentative velocities ----------------------------------------------
    i_rot = phys[P_ROTOR_INERTIA]
    for i in range(3):
        v_out[V_WHEEL + i] = v[V_WHEEL + i] + dt * tau_wheel[i] / i_rot
    i_rol = phys[P_ROLLER_INERTIA]
    for j in range(3 * n_rollers):
        v_out[V_ROLLER + j] = v[V_ROLLER + j] + dt * tau_roller[j] / i_rol

    iw = iw1
    iw_inv = iw_inv1

    hx_ = iw[0, 0] * wtx + iw[0, 1] * wty + iw[0, 2] * wtz
    hy_ = iw[1, 0] * wtx + iw[1, 1] * wty + iw[1, 2] * wtz
    hz_ = iw[2, 0] * wtx + iw[2, 1] * wty + iw[2, 2] * wtz
    gx = wty * hz_ - wtz * hy_
    gy = wtz * hx_ - wtx * hz_
    gz = wtx * hy_ - wty * hx_
    bx_ = t_tx - gx - sp_x
    by_ = t_ty - gy - sp_y
    bz_ = t_tz - gz - sp_z
    v_out[V_WT] = wtx + dt * (iw_inv[0, 0] * bx_ + iw_inv[0, 1] * by_ + iw_inv[0, 2] * bz_)
    v_out[V_WT + 1] = wty + dt * (iw_inv[1, 0] * bx_ + iw_inv[1, 1] * by_ + iw_inv[1, 2] * bz_)
    v_out[V_WT + 2] = wtz + dt * (iw_inv[2, 0] * bx_ + iw_inv[2, 1] * by_ + iw_inv[2, 2] * bz_)
    v_out[V_VT] = vtx + dt * f_tx / m_t
    v_out[V_VT + 1] = vty + dt * f_ty / m_t
    v_out[V_VT + 2] = vtz + dt * f_tz / m_t
    v_out[V_VB] = vbx + dt * f_bx / m_b
    v_out[V_VB + 1] = vby + dt * f_by / m_b
    v_out[V_VB + 2] = vbz + dt * f_bz / m_b
    v_out[V_WB] = wbx + dt * t_bx / i_b
    v_out[V_WB + 1] = wby + dt * t_by / i_b
    v_out[V_WB + 2] = wbz + dt * t_bz / i_b

    # ---- phase 2: friction via projected Gauss-Seidel sweeps ---------------
    pos = pos1
    for ci in range(n_con):
        con = contacts[ci]
        if con[C_WHEEL] < -0.5:
            _prep_ground_contact(con, v_out, phys, dt)
        else:
            _prep_wheel_contact(con, v_out, phys, iw_inv, dt, granular, pos)
    for _sweep in range(FRICTION_SWEEPS):
        for ci in range(n_con):
            con = contacts[ci]
            if con[C_ACTIVE] < 0.5:
                continue
            if con[C_WHEEL] < -0.5:
                _sweep_ground_contact(con, v_out, phys, dt)
            else:
                _sweep_wheel_contact(con, v_out, phys, iw_inv, dt, granular, pos)

    # ---- positions from final velocities -----------------------------------
    q_out[Q_PT] = comx + dt * v_out[V_VT]
    q_out[Q_PT + 1] = comy + dt * v_out[V_VT + 1]
    q_out[Q_PT + 2] = comz + dt * v_out[V_VT + 2]
    _quat_step(q[Q_QT : Q_QT + 4], v_out[V_WT], v_out[V_WT + 1], v_out[V_WT + 2], dt, q_out[Q_QT : Q_QT + 4])
    q_out[Q_PB] = pbx + dt * v_out[V_VB]
    q_out[Q_PB + 1] = pby + dt * v_out[V_VB + 1]
    q_out[Q_PB + 2] = pbz + dt * v_out[V_VB + 2]
    _quat_step(q[Q_QB : Q_QB + 4], v_out[V_WB], v_out[V_WB + 1], v_out[V_WB + 2], dt, q_out[Q_QB : Q_QB + 4])
    for i in range(3):
        q_out[Q_WHEEL + i] = q[Q_WHEEL + i] + dt * v_out[V_WHEEL + i]
    for j in range(3 * n_rollers):
        q_out[Q_ROLLER + j] = q[Q_ROLLER + j] + dt * v_out[V_ROLLER + j]

    for idx in range(q_out.shape[0]):
        if not math.isfinite(q_out[idx]):
            return 1
    for idx in range(v_out.shape[0]):
        if not math.isfinite(v_out[idx]):
            return 1
    return 0
