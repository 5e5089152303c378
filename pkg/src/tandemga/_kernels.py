"""Compiled inner loops shared by the plant, the controllers and the supervisor.

Everything here works on flat float64 arrays so it can run under numba's
nopython mode with the GIL released. The public, typed API lives in
``plant``, ``safe``, ``neuro`` and ``supervisor``; those modules pack their
dataclasses into the layouts below.
"""

import math

import numpy as np
from numba import njit

# PlantParams layout
M_CART, M_ROD, ROD_LEN, GRAV, CV, CF = 0, 1, 2, 3, 4, 5
V_NEUTRAL, V_DEADZONE, V_MIN, V_MAX, F_MAX, RAIL_HALF, THETA_MAX = 6, 7, 8, 9, 10, 11, 12
N_PLANT = 13

# SensorParams layout
OFF_P, OFF_TH, Q_P, Q_TH, SD_P, SD_TH = 0, 1, 2, 3, 4, 5
N_SENSOR = 6

# audit layout: max |p|, max |theta| over every substep, hard-stop contacts
A_MAXP, A_MAXTH, A_CONTACTS = 0, 1, 2

MODE_RESET, MODE_LEARN, MODE_SAFE = 0, 1, 2
CTRL_SAFE, CTRL_LEARN = 0, 1
STATUS_OK, STATUS_RESET_FAILED, STATUS_BLOWUP = 0, 1, 2


@njit(cache=True, nogil=True)
def motor_force(voltage, pp):
    v = min(max(voltage, pp[V_MIN]), pp[V_MAX])
    u = v - pp[V_NEUTRAL]
    if abs(u) < pp[V_DEADZONE]:
        return 0.0
    f = pp[CV] * u
    return min(max(f, -pp[F_MAX]), pp[F_MAX])


@njit(cache=True, nogil=True)
def deriv(p, v, th, om, force, pp):
    # Mass matrix [[M+m, a cos], [a cos, J]] with a = m l/2, J = m l^2/3.
    mt = pp[M_CART] + pp[M_ROD]
    a = 0.5 * pp[M_ROD] * pp[ROD_LEN]
    j = pp[M_ROD] * pp[ROD_LEN] * pp[ROD_LEN] / 3.0
    s = math.sin(th)
    c = math.cos(th)
    r1 = force - pp[CF] * v + a * om * om * s
    r2 = a * pp[GRAV] * s
    det = mt * j - a * a * c * c
    pdd = (j * r1 - a * c * r2) / det
    thdd = (mt * r2 - a * c * r1) / det
    return v, pdd, om, thdd


@njit(cache=True, nogil=True)
def rk4_substep(p, v, th, om, force, pp, h):
    k1p, k1v, k1t, k1o = deriv(p, v, th, om, force, pp)
    hh = 0.5 * h
    k2p, k2v, k2t, k2o = deriv(p + hh * k1p, v + hh * k1v, th + hh * k1t, om + hh * k1o, force, pp)
    k3p, k3v, k3t, k3o = deriv(p + hh * k2p, v + hh * k2v, th + hh * k2t, om + hh * k2o, force, pp)
    k4p, k4v, k4t, k4o = deriv(p + h * k3p, v + h * k3v, th + h * k3t, om + h * k3o, force, pp)
    w = h / 6.0
    return (
        p + w * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
        v + w * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
        th + w * (k1t + 2.0 * k2t + 2.0 * k3t + k4t),
        om + w * (k1o + 2.0 * k2o + 2.0 * k3o + k4o),
    )


@njit(cache=True, nogil=True)
def advance(x, voltage, pp, h, substeps, audit):
    """Integrate one sampling interval in place. Returns (saturated, finite)."""
    force = motor_force(voltage, pp)
    p, v, th, om = x[0], x[1], x[2], x[3]
    rail = pp[RAIL_HALF]
    tmax = pp[THETA_MAX]
    saturated = False
    for _ in range(substeps):
        p, v, th, om = rk4_substep(p, v, th, om, force, pp, h)
        if not (math.isfinite(p) and math.isfinite(v) and math.isfinite(th) and math.isfinite(om)):
            x[0], x[1], x[2], x[3] = p, v, th, om
            return saturated, False
        # audit on the raw integrated value, before any clamping
        if abs(p) > audit[A_MAXP]:
            audit[A_MAXP] = abs(p)
        if abs(th) > audit[A_MAXTH]:
            audit[A_MAXTH] = abs(th)
        if p >= rail:
            p = rail
            if v > 0.0:
                v = 0.0
            saturated = True
        elif p <= -rail:
            p = -rail
            if v < 0.0:
                v = 0.0
            saturated = True
        if th >= tmax:
            th = tmax
            if om > 0.0:
                om = 0.0
            saturated = True
        elif th <= -tmax:
            th = -tmax
            if om < 0.0:
                om = 0.0
            saturated = True
    if saturated:
        audit[A_CONTACTS] += 1.0
    x[0], x[1], x[2], x[3] = p, v, th, om
    return saturated, True


@njit(cache=True, nogil=True)
def quantize(x, step):
    if step <= 0.0:
        return x
    return math.floor(x / step + 0.5) * step


@njit(cache=True, nogil=True)
def measure(x, meas, sens, z_p, z_th, dt):
    """Sample the sensors; ``meas`` holds the previous sample and is overwritten."""
    mp = quantize(x[0] + sens[OFF_P] + sens[SD_P] * z_p, sens[Q_P])
    mt = quantize(x[2] + sens[OFF_TH] + sens[SD_TH] * z_th, sens[Q_TH])
    meas[1] = (mp - meas[0]) / dt
    meas[3] = (mt - meas[2]) / dt
    meas[0] = mp
    meas[2] = mt


@njit(cache=True, nogil=True)
def safe_voltage(K, x, s0, pp):
    u = 0.0
    for i in range(4):
        u += K[i] * (x[i] - s0[i])
    return min(max(pp[V_NEUTRAL] - u, pp[V_MIN]), pp[V_MAX])


@njit(cache=True, nogil=True)
def sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True, nogil=True)
def mlp_output(W1, b1, W2, b2, W3, b3, x):
    h1 = np.empty(W1.shape[0])
    for i in range(W1.shape[0]):
        z = b1[i]
        for j in range(W1.shape[1]):
            z += W1[i, j] * x[j]
        h1[i] = sigmoid(z)
    h2 = np.empty(W2.shape[0])
    for i in range(W2.shape[0]):
        z = b2[i]
        for j in range(W2.shape[1]):
            z += W2[i, j] * h1[j]
        h2[i] = sigmoid(z)
    z = b3[0]
    for j in range(W3.shape[1]):
        z += W3[0, j] * h2[j]
    return sigmoid(z)


@njit(cache=True, nogil=True)
def in_box(x, s0, lim):
    for i in range(4):
        if abs(x[i] - s0[i]) > lim[i]:
            return False
    return True


@njit(cache=True, nogil=True)
def run_segment(x, meas, measure_first, pp, sens, noise, noise_start, dt, substeps,
                n_steps, mode, K, s0, lim, tol, W1, b1, W2, b2, W3, b3, observe_measured,
                v_scale, tr_x, tr_obs, tr_volt, tr_ctrl, tr_inlim, audit):
    """Run up to ``n_steps`` sampling intervals under one supervision mode.

    Sample k is recorded in row k of the trace arrays: the true state, the
    observed state, the voltage commanded at t_k and the controller that
    commanded it. The function returns ``(rows, switch_row, status)``;
    ``switch_row`` is -1 when the LEARNING controller never left the box.
    """
    h = dt / substeps
    obs = meas
    switch_row = -1
    n_noise = noise.shape[0]
    for k in range(n_steps + 1):
        if k > 0 or measure_first:
            idx = noise_start + k
            if idx < n_noise:
                measure(x, meas, sens, noise[idx, 0], noise[idx, 1], dt)
            else:
                measure(x, meas, sens, 0.0, 0.0, dt)
        if observe_measured:
            obs = meas
        else:
            obs = x
        inl = in_box(obs, s0, lim)
        for i in range(4):
            tr_x[k, i] = x[i]
            tr_obs[k, i] = obs[i]
        tr_inlim[k] = inl

        if mode == MODE_RESET:
            done = True
            for i in range(4):
                if abs(x[i] - s0[i]) >= tol[i]:
                    done = False
            volt = safe_voltage(K, x, s0, pp)
            tr_volt[k] = volt
            tr_ctrl[k] = CTRL_SAFE
            if done:
                return k + 1, switch_row, STATUS_OK
            if k == n_steps:
                return k + 1, switch_row, STATUS_RESET_FAILED
        elif mode == MODE_LEARN:
            if switch_row < 0 and not inl:
                switch_row = k
            if switch_row >= 0:
                volt = safe_voltage(K, x, s0, pp)
                tr_ctrl[k] = CTRL_SAFE
            else:
                volt = v_scale * mlp_output(W1, b1, W2, b2, W3, b3, obs)
                tr_ctrl[k] = CTRL_LEARN
            tr_volt[k] = volt
        else:
            volt = safe_voltage(K, x, s0, pp)
            tr_volt[k] = volt
            tr_ctrl[k] = CTRL_SAFE

        if k < n_steps:
            sat, finite = advance(x, volt, pp, h, substeps, audit)
            if not finite:
                return k + 1, switch_row, STATUS_BLOWUP
    return n_steps + 1, switch_row, STATUS_OK
