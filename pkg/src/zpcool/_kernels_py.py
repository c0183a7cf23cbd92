"""Pure-numpy photon-counting trajectory kernel (vectorized across trajectories).

Mirrors ``_kernels.pyx`` operation for operation so both backends consume the
same uniforms and produce the same records.
"""

from __future__ import annotations

import numpy as np


def _rhs(stokes, G, kap, gam, Nbar, k, u, no, nm):
    if stokes:
        du = -2.0 * G * (no + nm + 1.0) - (kap + gam) * u - 2.0 * k * u * no
        dnm = -G * u - 2.0 * gam * (nm - Nbar) - 0.5 * k * u * u
    else:
        du = 2.0 * G * (no - nm) - (kap + gam) * u - 2.0 * k * u * no
        dnm = G * u - 2.0 * gam * (nm - Nbar) - 0.5 * k * u * u
    dno = -G * u - 2.0 * kap * no - 2.0 * k * no * no
    return du, dno, dnm


def advance(y, since, logp, nclicks, first_click, U, step0, dt, stokes, G, kap, gam, Nbar, k_eta, window_steps):
    """Advance every trajectory by ``U.shape[0]`` steps of size ``dt``, in place.

    Parameters
    ----------
    y : (n, 3) float64
        Moment vectors (u, n_opt, n_mech).
    since : (n,) int64
        Steps since the last click; monitoring resumes once it reaches ``window_steps``.
    logp : (n,) float64
        Accumulated log-probability of each record.
    nclicks : (n,) int64
    first_click : (n,) float64
        Time of the first click (NaN until one happens).
    U : (steps, n) float64
        Uniform deviates, one per trajectory per step.
    step0 : int
        Global index of the first step (sets click times).

    Returns
    -------
    float
        Largest per-step click probability encountered.
    """
    stokes = bool(stokes)
    u = y[:, 0].copy()
    no = y[:, 1].copy()
    nm = y[:, 2].copy()
    p_max = 0.0
    h = dt
    for j in range(U.shape[0]):
        monitored = since >= window_steps
        p1 = np.where(monitored, 2.0 * k_eta * no * dt, 0.0)
        if p1.size:
            p_max = max(p_max, float(p1.max()))
        click = U[j] < p1
        k = np.where(monitored & ~click, k_eta, 0.0)
        if click.any():
            idx = np.nonzero(click)[0]
            logp[idx] += np.log(p1[idx])
            nm[idx] = nm[idx] + u[idx] * u[idx] / (4.0 * no[idx])
            u[idx] = 2.0 * u[idx]
            no[idx] = 2.0 * no[idx]
            nclicks[idx] += 1
            fresh = idx[np.isnan(first_click[idx])]
            first_click[fresh] = (step0 + j) * dt
            since[idx] = 0
        quiet = monitored & ~click
        logp[quiet] += np.log1p(-p1[quiet])
        # classical RK4 with a per-trajectory measurement strength k
        a1, b1, c1 = _rhs(stokes, G, kap, gam, Nbar, k, u, no, nm)
        a2, b2, c2 = _rhs(stokes, G, kap, gam, Nbar, k, u + 0.5 * h * a1, no + 0.5 * h * b1, nm + 0.5 * h * c1)
        a3, b3, c3 = _rhs(stokes, G, kap, gam, Nbar, k, u + 0.5 * h * a2, no + 0.5 * h * b2, nm + 0.5 * h * c2)
        a4, b4, c4 = _rhs(stokes, G, kap, gam, Nbar, k, u + h * a3, no + h * b3, nm + h * c3)
        u = u + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        no = no + (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        nm = nm + (h / 6.0) * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        since += 1
    y[:, 0] = u
    y[:, 1] = no
    y[:, 2] = nm
    return p_max
