"""Compiled inner loop of the Langevin integrator.

One call advances a single trajectory over a chunk of steps. All random
numbers are drawn outside and passed in, so results depend only on the
caller's streams.
"""
import math

import numpy as np
from numba import njit

SHAPE_HARMONIC = 0
SHAPE_GAUSSIAN_BEAM = 1
SHAPE_GAUSSIAN_WAIST = 2

STATUS_OK = 0
STATUS_LOST = 1
STATUS_NAN = 2


@njit(cache=True, nogil=True)
def trap_force_nb(r, env, mass, omega, shape, U0, L, out):
    if env == 0.0:
        out[0] = 0.0
        out[1] = 0.0
        out[2] = 0.0
        return
    if shape == SHAPE_HARMONIC:
        for i in range(3):
            out[i] = -env * mass * omega[i] * omega[i] * r[i]
        return
    x = r[0]
    y = r[1]
    z = r[2]
    if shape == SHAPE_GAUSSIAN_BEAM:
        s = 1.0 / (1.0 + (z / L[2]) ** 2)
        rho = (x / L[0]) ** 2 + (y / L[1]) ** 2
        g = math.exp(-2.0 * rho * s)
        out[0] = -env * U0 * s * g * 4.0 * x * s / (L[0] * L[0])
        out[1] = -env * U0 * s * g * 4.0 * y * s / (L[1] * L[1])
        ds = -2.0 * z * s * s / (L[2] * L[2])
        out[2] = env * U0 * g * ds * (1.0 - 2.0 * rho * s)
    else:
        g = math.exp(-2.0 * ((x / L[0]) ** 2 + (y / L[1]) ** 2 + (z / L[2]) ** 2))
        for i in range(3):
            out[i] = -env * U0 * g * 4.0 * r[i] / (L[i] * L[i])


@njit(cache=True, nogil=True)
def run_chunk(n, dt, K, mass, omega, shape, U0, L, C, Fconst, gamma, Dgas, recoil,
              env, fbmask, vdc, abs_std,
              fb_k, fb_route, fb_wc, fb_delay,
              det_gain, det_w, det_std,
              frac, ou_decay,
              xi_force, xi_det, xi_abs, xi_frac, use_det_noise, use_supply,
              r, p, filt, ou, vbuf, bufpos, det_acc,
              loss_radius, sample_offset, out_pos, out_mom, out_det, out_env, out_vfb):
    """Advance ``n`` steps. Returns (status, steps_done).

    State arrays (r, p, filt, ou, vbuf, bufpos, det_acc) are updated in
    place so consecutive chunks continue seamlessly.
    """
    h = dt
    F = np.zeros(3)
    Ft = np.zeros(3)
    V = np.zeros(3)
    vfb = np.zeros(3)
    reading = np.zeros(3)
    if gamma > 0.0:
        c_ou = math.exp(-gamma * h)
        s2_ou = -math.expm1(-2.0 * gamma * h) / (2.0 * gamma)
    else:
        c_ou = 1.0
        s2_ou = h
    nbuf = vbuf.shape[1]
    ou_drive = math.sqrt(max(0.0, 1.0 - ou_decay * ou_decay))
    for k in range(n):
        e = env[k]
        # detection at the start of the step drives this step's feedback
        for c in range(3):
            sig = det_w[c, 0] * r[0] + det_w[c, 1] * r[1] + det_w[c, 2] * r[2]
            noise = det_std[c] * xi_det[k, c] if use_det_noise else 0.0
            reading[c] = det_gain[c] * sig + noise
            det_acc[c] += noise
        pos = bufpos[0]
        for i in range(3):
            y = reading[i] / det_gain[i]
            v = fb_wc[i] * (y - filt[i])
            filt[i] += -math.expm1(-fb_wc[i] * h) * (y - filt[i])
            vbuf[i, pos] = v
        for j in range(3):
            V[j] = vdc[k, j]
            vfb[j] = 0.0
        for i in range(3):
            if fbmask[k, i]:
                d = fb_delay[i]
                vd = vbuf[i, (pos - d + nbuf) % nbuf]
                vfb[fb_route[i]] += -fb_k[i] * vd
        bufpos[0] = (pos + 1) % nbuf
        if use_supply:
            for j in range(3):
                ou[j] = ou[j] * ou_decay + ou_drive * xi_frac[k, j]
                V[j] += abs_std[k, j] * xi_abs[k, j] + frac * vdc[k, j] * ou[j]
        for j in range(3):
            V[j] += vfb[j]
        # B
        trap_force_nb(r, e, mass, omega, shape, U0, L, Ft)
        for i in range(3):
            F[i] = Ft[i] + Fconst[i] + C[i, 0] * V[0] + C[i, 1] * V[1] + C[i, 2] * V[2]
            p[i] += 0.5 * h * F[i]
        # A
        for i in range(3):
            r[i] += 0.5 * h * p[i] / mass
        # O
        for i in range(3):
            D = Dgas + recoil[i] * e
            p[i] = c_ou * p[i] + math.sqrt(D * s2_ou) * xi_force[k, i]
        # A
        for i in range(3):
            r[i] += 0.5 * h * p[i] / mass
        # B
        trap_force_nb(r, e, mass, omega, shape, U0, L, Ft)
        for i in range(3):
            F[i] = Ft[i] + Fconst[i] + C[i, 0] * V[0] + C[i, 1] * V[1] + C[i, 2] * V[2]
            p[i] += 0.5 * h * F[i]
        bad = False
        lost = False
        for i in range(3):
            if not (math.isfinite(r[i]) and math.isfinite(p[i])):
                bad = True
            elif abs(r[i]) > loss_radius:
                lost = True
        if bad:
            return STATUS_NAN, k + 1
        step_no = sample_offset + k + 1
        if step_no % K == 0:
            s = step_no // K - 1
            for c in range(3):
                sig = det_w[c, 0] * r[0] + det_w[c, 1] * r[1] + det_w[c, 2] * r[2]
                out_det[s, c] = det_gain[c] * sig + det_acc[c] / K
                det_acc[c] = 0.0
                out_pos[s, c] = r[c]
                out_mom[s, c] = p[c]
                out_vfb[s, c] = vfb[c]
            out_env[s] = e
        if lost:
            return STATUS_LOST, k + 1
    return STATUS_OK, n
