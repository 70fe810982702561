"""Compiled inner loops for product targets and the Langevin integrator.

Densities are selected by an integer code so one compiled kernel serves
every built-in family. Random numbers are drawn by the caller and passed
in, which keeps the streams under numpy's ``Generator`` control.
"""
import math

import numpy as np
from numba import njit

NORMAL, LOGISTIC, LAPLACE = 0, 1, 2

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@njit(cache=True, nogil=True)
def log_f(code, x):
    if code == NORMAL:
        return -0.5 * x * x - _HALF_LOG_2PI
    if code == LOGISTIC:
        a = abs(x)
        return -a - 2.0 * math.log1p(math.exp(-a))
    return -abs(x) - math.log(2.0)


@njit(cache=True, nogil=True)
def dlog_f(code, x):
    if code == NORMAL:
        return -x
    if code == LOGISTIC:
        return -math.tanh(0.5 * x)
    if x > 0:
        return -1.0
    if x < 0:
        return 1.0
    return 0.0


@njit(cache=True, nogil=True)
def product_block(
    code, x, lfx, theta, s, z, u,
    step0, batch_size, batch_acc, class_idx, batch_sq_class, istar, batch_sq_istar,
    sq_sum, thin, track, traj, n_rec, labels, r_scale, r_sums,
):
    """Advance an RWM chain on a product target through one block of draws.

    Returns ``(accepted, n_rec, status)``; status 0 is normal, 1 flags a
    non-finite log acceptance ratio. ``x``, ``lfx`` and the accumulators
    are updated in place.
    """
    n_steps, d = z.shape
    y = np.empty(d)
    ly = np.empty(d)
    accepted = 0
    cap = traj.shape[0]
    n_class = class_idx.shape[0]
    for t in range(n_steps):
        lr = 0.0
        lx_total = 0.0
        for j in range(d):
            yj = x[j] + s[j] * z[t, j]
            lyj = log_f(code, theta[j] * yj)
            y[j] = yj
            ly[j] = lyj
            lr += lyj - lfx[j]
            lx_total += lfx[j]
        step = step0 + t
        b = step // batch_size
        if lx_total == -np.inf:
            take = True
        elif math.isnan(lr):
            return accepted, n_rec, 1
        else:
            take = math.log(u[t]) < lr
        if take:
            accepted += 1
            batch_acc[b] += 1
            for j in range(d):
                dj = y[j] - x[j]
                sq_sum[j] += dj * dj
                x[j] = y[j]
                lfx[j] = ly[j]
            di = s[istar] * z[t, istar]
            batch_sq_istar[b] += di * di
            acc_c = 0.0
            for k in range(n_class):
                dk = s[class_idx[k]] * z[t, class_idx[k]]
                acc_c += dk * dk
            batch_sq_class[b] += acc_c / n_class
        if (step + 1) % thin == 0 and n_rec < cap:
            for k in range(track.shape[0]):
                traj[n_rec, k] = x[track[k]]
            for j in range(d):
                g = labels[j]
                if g >= 0 and j != istar:
                    sc = theta[j] * dlog_f(code, theta[j] * x[j])
                    r_sums[g] += sc * sc * r_scale
            n_rec += 1
    return accepted, n_rec, 0


@njit(cache=True, nogil=True)
def euler_maruyama(code, z0, v, dt, noise):
    n_steps, m = noise.shape
    out = np.empty((n_steps + 1, m))
    sd = math.sqrt(v * dt)
    for i in range(m):
        z = z0[i]
        out[0, i] = z
        for k in range(n_steps):
            z = z + 0.5 * v * dlog_f(code, z) * dt + sd * noise[k, i]
            out[k + 1, i] = z
    return out
