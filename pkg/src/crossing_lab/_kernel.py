"""Compiled equations of motion for the planar vehicle.

Generalised coordinates ``q``::

    0 x_c   1 z_c   2 theta   3 s_fx   4 s_fz   5 s_rz   6 phi_f   7 phi_r

theta is positive nose-up.  s_fx is the front wheel's longitudinal offset
from its neutral mount (negative = shortening, wheel pushed back), s_fz and
s_rz are vertical compressions (wheel moves up relative to the chassis).
phi_* are absolute wheel spin angles, positive for forward rolling.

Equations are assembled per point mass, ``M(q) qdd = Q - sum m J^T Jdot qd``,
and advanced with semi-implicit (symplectic) Euler.
"""

import math

import numpy as np
from numba import njit

from .contact import _friction_coefficient, _impact_force, _probe_step, _segment_gap, step_smooth

NQ = 8

# parameter vector layout
P_MC, P_IC, P_MA, P_JW, P_WR = 0, 1, 2, 3, 4
P_AF, P_AR, P_HF, P_HR = 5, 6, 7, 8
P_KS, P_CV, P_CAV, P_DL, P_DLV, P_KEND, P_CEND, P_G = 9, 10, 11, 12, 13, 14, 15, 16
P_KC, P_EC, P_CMAX, P_DPEN, P_MUS, P_MUD, P_VST, P_VFR = 17, 18, 19, 20, 21, 22, 23, 24
P_HO, P_OX, P_TMIN, P_TMAX, P_KP, P_KI = 25, 26, 27, 28, 29, 30
P_FB = 31  # speed feedback: 0 chassis x-velocity, 1 mean wheel rim speed
N_PARAMS = 32

# controller vector layout
C_MODE, C_TARGET, C_INTEGRAL, C_TAU, C_CROSSED, C_T1, C_POST_MODE = 0, 1, 2, 3, 4, 5, 6
N_CTRL = 7
MODE_SPEED_HOLD, MODE_TORQUE_HOLD, MODE_CROSSING_COMMAND = 0, 1, 2

# diagnostics layout (filled by _dynamics)
D_KE, D_KE_CHASSIS, D_PE = 0, 1, 2
D_GAP_FS, D_GAP_FG, D_GAP_RS, D_GAP_RG, D_GAP_RSEG, D_GAP_FSEG = 3, 4, 5, 6, 7, 8
D_XF, D_ZF, D_XR, D_ZR, D_SLIP_F, D_SLIP_R = 9, 10, 11, 12, 13, 14
D_FX_EXT = 15
D_FCX_F, D_FCZ_F, D_FCX_R, D_FCZ_R = 16, 17, 18, 19
D_FS_X, D_FS_ZF, D_FS_ZR = 20, 21, 22
N_DIAG = 23

# recorded row layout
RECORD_COLUMNS = (
    "t", "x_c", "z_c", "theta", "v_x", "v_z", "theta_dot",
    "s_fx", "s_fz", "s_rz", "tau", "E_c",
    "E_c_chassis", "E_mech", "s_fx_dot", "s_fz_dot", "s_rz_dot",
    "omega_f", "omega_r",
    "gap_front_step", "gap_front_ground", "gap_rear_step", "gap_rear_ground",
    "gap_rear_face", "gap_front_face",
    "x_front", "z_front", "x_rear", "z_rear", "slip_front", "slip_rear",
    "fx_external",
)
N_REC = len(RECORD_COLUMNS)


@njit(cache=True)
def _endstop(s, sd, limit, k, c):
    """Force on coordinate s from a one-sided penalty stop at +-limit."""
    if s > limit:
        pen = s - limit
        f = -k * pen - c * sd * step_smooth(pen, 0.0, 0.0, 1e-3, 1.0)
        return min(f, 0.0), 0.5 * k * pen * pen
    if s < -limit:
        pen = -limit - s
        f = k * pen - c * sd * step_smooth(pen, 0.0, 0.0, 1e-3, 1.0)
        return max(f, 0.0), 0.5 * k * pen * pen
    return 0.0, 0.0


@njit(cache=True)
def _wheel_contact(cx, cz, vx, vz, spin, sep, nx, nz, P, Fc):
    """Penalty + friction force of one probe; adds world force to Fc and
    returns (spin generalised force, slip speed, elastic energy)."""
    wr = P[P_WR]
    if sep > wr:
        return 0.0, 0.0, 0.0
    rate = nx * vx + nz * vz
    fn = _impact_force(wr, sep, rate, P[P_KC], P[P_EC], P[P_CMAX], P[P_DPEN])
    # rim point relative to centre and its velocity (absolute CCW rate = -spin)
    dx = -nx * wr
    dz = -nz * wr
    vcx = vx + spin * dz
    vcz = vz - spin * dx
    tx = nz
    tz = -nx
    slip = tx * vcx + tz * vcz
    mu = _friction_coefficient(abs(slip), P[P_MUS], P[P_MUD], P[P_VST], P[P_VFR])
    ft = -mu * fn if slip > 0.0 else (mu * fn if slip < 0.0 else 0.0)
    fx = nx * fn + tx * ft
    fz = nz * fn + tz * ft
    Fc[0] += fx
    Fc[1] += fz
    pen = wr - sep
    energy = P[P_KC] * pen ** (P[P_EC] + 1.0) / (P[P_EC] + 1.0)
    return fx * dz - fz * dx, slip, energy


@njit(cache=True)
def _dynamics(y, tau, P, M, Q, diag):
    """Fill mass matrix M, right-hand side Q and diagnostics for state y."""
    q = y[:NQ]
    qd = y[NQ:]
    th = q[2]
    thd = qd[2]
    c = math.cos(th)
    s = math.sin(th)
    g = P[P_G]
    mc = P[P_MC]
    ma = P[P_MA]
    wr = P[P_WR]
    ho = P[P_HO]
    ox = P[P_OX]

    for i in range(NQ):
        Q[i] = 0.0
        for j in range(NQ):
            M[i, j] = 0.0
    M[0, 0] = mc
    M[1, 1] = mc
    M[2, 2] = P[P_IC]
    M[6, 6] = P[P_JW]
    M[7, 7] = P[P_JW]
    Q[1] -= mc * g

    ke_spin = 0.5 * P[P_JW] * (qd[6] ** 2 + qd[7] ** 2)
    pe = mc * g * q[1]

    # suspension springs, dampers and stops (per-axle values in P)
    ks = P[P_KS]
    f, e = _endstop(q[3], qd[3], P[P_DL], P[P_KEND], P[P_CEND])
    diag[D_FS_X] = -ks * q[3] - P[P_CAV] * qd[3] + f
    pe += 0.5 * ks * q[3] ** 2 + e
    f, e = _endstop(q[4], qd[4], P[P_DLV], P[P_KEND], P[P_CEND])
    diag[D_FS_ZF] = -ks * q[4] - P[P_CV] * qd[4] + f
    pe += 0.5 * ks * q[4] ** 2 + e
    f, e = _endstop(q[5], qd[5], P[P_DLV], P[P_KEND], P[P_CEND])
    diag[D_FS_ZR] = -ks * q[5] - P[P_CV] * qd[5] + f
    pe += 0.5 * ks * q[5] ** 2 + e
    Q[3] += diag[D_FS_X]
    Q[4] += diag[D_FS_ZF]
    Q[5] += diag[D_FS_ZR]

    # drive torque per axle, reaction on the chassis
    Q[6] += tau
    Q[7] += tau
    Q[2] += 2.0 * tau

    J = np.zeros((2, NQ))
    F = np.zeros(2)
    Fc = np.zeros(2)
    fx_ext = 0.0
    ke_trans = 0.0
    for w in range(2):
        # body-frame offset of the wheel centre and its rate
        if w == 0:
            bx = P[P_AF] + q[3]
            bz = -P[P_HF] + q[4]
            bxd = qd[3]
            bzd = qd[4]
        else:
            bx = -P[P_AR]
            bz = -P[P_HR] + q[5]
            bxd = 0.0
            bzd = qd[5]
        rx = c * bx - s * bz
        rz = s * bx + c * bz
        # d(R b)/dtheta
        rpx = -s * bx - c * bz
        rpz = c * bx - s * bz
        for i in range(2):
            for j in range(NQ):
                J[i, j] = 0.0
        J[0, 0] = 1.0
        J[1, 1] = 1.0
        J[0, 2] = rpx
        J[1, 2] = rpz
        if w == 0:
            J[0, 3] = c
            J[1, 3] = s
            J[0, 4] = -s
            J[1, 4] = c
        else:
            J[0, 5] = -s
            J[1, 5] = c
        cx = q[0] + rx
        cz = q[1] + rz
        vx = 0.0
        vz = 0.0
        for j in range(NQ):
            vx += J[0, j] * qd[j]
            vz += J[1, j] * qd[j]
        ke_trans += 0.5 * ma * (vx * vx + vz * vz)
        pe += ma * g * cz
        # Jdot qd = -thd^2 R b + 2 thd R' bdot
        bias_x = -thd * thd * rx + 2.0 * thd * (-s * bxd - c * bzd)
        bias_z = -thd * thd * rz + 2.0 * thd * (c * bxd - s * bzd)

        Fc[0] = 0.0
        Fc[1] = 0.0
        spin = qd[6 + w]
        q_spin = 0.0
        slip_out = 0.0
        # ground probe is shadowed by the block once the centre is past the face
        gap_ground = cz - wr
        if cx <= ox or ho <= 0.0:
            qs, sl, en = _wheel_contact(cx, cz, vx, vz, spin, cz, 0.0, 1.0, P, Fc)
            q_spin += qs
            pe += en
            if cz <= wr:
                slip_out = sl
        else:
            gap_ground = 1.0
        gap_step = 1.0
        gap_face = 1.0
        if ho > 0.0:
            sep, nx, nz, px, pz, feat = _probe_step(cx, cz, ho, ox)
            gap_step = sep - wr
            gap_face = _segment_gap(cx, cz, ho, ox) - wr
            qs, sl, en = _wheel_contact(cx, cz, vx, vz, spin, sep, nx, nz, P, Fc)
            q_spin += qs
            pe += en
            if sep <= wr and abs(sl) > abs(slip_out):
                slip_out = sl
        F[0] = Fc[0] - ma * bias_x
        F[1] = Fc[1] - ma * bias_z - ma * g
        fx_ext += Fc[0]
        for j in range(NQ):
            Q[j] += J[0, j] * F[0] + J[1, j] * F[1]
            for k in range(NQ):
                M[j, k] += ma * (J[0, j] * J[0, k] + J[1, j] * J[1, k])
        Q[6 + w] += q_spin
        if w == 0:
            diag[D_GAP_FS] = gap_step
            diag[D_GAP_FG] = gap_ground
            diag[D_GAP_FSEG] = gap_face
            diag[D_XF] = cx
            diag[D_ZF] = cz
            diag[D_SLIP_F] = slip_out
            diag[D_FCX_F] = Fc[0]
            diag[D_FCZ_F] = Fc[1]
        else:
            diag[D_GAP_RS] = gap_step
            diag[D_GAP_RG] = gap_ground
            diag[D_GAP_RSEG] = gap_face
            diag[D_XR] = cx
            diag[D_ZR] = cz
            diag[D_SLIP_R] = slip_out
            diag[D_FCX_R] = Fc[0]
            diag[D_FCZ_R] = Fc[1]

    ke_chassis = 0.5 * mc * (qd[0] ** 2 + qd[1] ** 2) + 0.5 * P[P_IC] * thd * thd
    diag[D_KE] = ke_chassis + ke_trans + ke_spin
    diag[D_KE_CHASSIS] = ke_chassis
    diag[D_PE] = pe
    diag[D_FX_EXT] = fx_ext


@njit(cache=True)
def _controller(ctrl, speed, dt, P):
    """PI speed hold with conditional-integration anti-windup."""
    tmin = P[P_TMIN]
    tmax = P[P_TMAX]
    if ctrl[C_MODE] != MODE_SPEED_HOLD:
        return
    err = ctrl[C_TARGET] - speed
    trial = ctrl[C_INTEGRAL] + err * dt
    raw = P[P_KP] * err + P[P_KI] * trial
    if raw > tmax:
        if err < 0.0:
            ctrl[C_INTEGRAL] = trial
        ctrl[C_TAU] = tmax
    elif raw < tmin:
        if err > 0.0:
            ctrl[C_INTEGRAL] = trial
        ctrl[C_TAU] = tmin
    else:
        ctrl[C_INTEGRAL] = trial
        ctrl[C_TAU] = raw


@njit(cache=True)
def _scheduled_torque(t_rel, sched_t, sched_v, fallback):
    tau = fallback
    for i in range(sched_t.shape[0]):
        if t_rel >= sched_t[i]:
            tau = sched_v[i]
    return tau


@njit(cache=True)
def accelerations(y, tau, P):
    M = np.empty((NQ, NQ))
    Q = np.empty(NQ)
    diag = np.empty(N_DIAG)
    _dynamics(y, tau, P, M, Q, diag)
    return np.linalg.solve(M, Q), diag


@njit(cache=True)
def generalized_system(y, tau, P):
    M = np.empty((NQ, NQ))
    Q = np.empty(NQ)
    diag = np.empty(N_DIAG)
    _dynamics(y, tau, P, M, Q, diag)
    return M, Q, diag


@njit(cache=True)
def _record(rec, row, t, y, tau, diag):
    rec[row, 0] = t
    rec[row, 1] = y[0]
    rec[row, 2] = y[1]
    rec[row, 3] = y[2]
    rec[row, 4] = y[8]
    rec[row, 5] = y[9]
    rec[row, 6] = y[10]
    rec[row, 7] = y[3]
    rec[row, 8] = y[4]
    rec[row, 9] = y[5]
    rec[row, 10] = tau
    rec[row, 11] = diag[D_KE]
    rec[row, 12] = diag[D_KE_CHASSIS]
    rec[row, 13] = diag[D_KE] + diag[D_PE]
    rec[row, 14] = y[11]
    rec[row, 15] = y[12]
    rec[row, 16] = y[13]
    rec[row, 17] = y[14]
    rec[row, 18] = y[15]
    rec[row, 19] = diag[D_GAP_FS]
    rec[row, 20] = diag[D_GAP_FG]
    rec[row, 21] = diag[D_GAP_RS]
    rec[row, 22] = diag[D_GAP_RG]
    rec[row, 23] = diag[D_GAP_RSEG]
    rec[row, 24] = diag[D_GAP_FSEG]
    rec[row, 25] = diag[D_XF]
    rec[row, 26] = diag[D_ZF]
    rec[row, 27] = diag[D_XR]
    rec[row, 28] = diag[D_ZR]
    rec[row, 29] = diag[D_SLIP_F]
    rec[row, 30] = diag[D_SLIP_R]
    rec[row, 31] = diag[D_FX_EXT]


@njit(cache=True)
def advance(y, t, ctrl, P, sched_t, sched_v, dt, n_steps, rec, bound):
    """Advance ``n_steps`` of semi-implicit Euler in place.

    Row ``i`` of ``rec`` receives the state at the start of step ``i``.
    Returns the number of completed steps; fewer than ``n_steps`` means a
    non-finite or out-of-bound state was hit (the offending state is left
    in ``y``).
    """
    M = np.empty((NQ, NQ))
    Q = np.empty(NQ)
    diag = np.empty(N_DIAG)
    for i in range(n_steps):
        time = t + i * dt
        # torque for this step
        if ctrl[C_MODE] == MODE_CROSSING_COMMAND:
            ctrl[C_TAU] = _scheduled_torque(time - ctrl[C_T1], sched_t, sched_v, ctrl[C_TAU])
        tau = min(max(ctrl[C_TAU], P[P_TMIN]), P[P_TMAX])
        _dynamics(y, tau, P, M, Q, diag)
        _record(rec, i, time, y, tau, diag)
        if ctrl[C_CROSSED] == 0.0 and diag[D_GAP_FS] < 0.0:
            ctrl[C_CROSSED] = 1.0
            ctrl[C_T1] = time
            ctrl[C_MODE] = ctrl[C_POST_MODE]
        qdd = np.linalg.solve(M, Q)
        for j in range(NQ):
            y[NQ + j] += dt * qdd[j]
        for j in range(NQ):
            y[j] += dt * y[NQ + j]
        ok = True
        for j in range(2 * NQ):
            if not math.isfinite(y[j]) or abs(y[j]) > bound:
                ok = False
        if not ok:
            return i + 1
        if P[P_FB] > 0.5:
            speed = 0.5 * (y[NQ + 6] + y[NQ + 7]) * P[P_WR]
        else:
            speed = y[NQ]
        _controller(ctrl, speed, dt, P)
    return n_steps
