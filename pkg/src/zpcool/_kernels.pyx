# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled photon-counting trajectory kernel; see ``_kernels_py.advance`` for the contract."""

from libc.math cimport log, log1p, isnan


cdef inline void _rhs(bint stokes, double G, double kap, double gam, double Nbar, double k,
                      double u, double no, double nm,
                      double* du, double* dno, double* dnm) noexcept nogil:
    if stokes:
        du[0] = -2.0 * G * (no + nm + 1.0) - (kap + gam) * u - 2.0 * k * u * no
        dnm[0] = -G * u - 2.0 * gam * (nm - Nbar) - 0.5 * k * u * u
    else:
        du[0] = 2.0 * G * (no - nm) - (kap + gam) * u - 2.0 * k * u * no
        dnm[0] = G * u - 2.0 * gam * (nm - Nbar) - 0.5 * k * u * u
    dno[0] = -G * u - 2.0 * kap * no - 2.0 * k * no * no


def advance(double[:, ::1] y, long long[::1] since, double[::1] logp, long long[::1] nclicks,
            double[::1] first_click, const double[:, ::1] U, long long step0, double dt, bint stokes,
            double G, double kap, double gam, double Nbar, double k_eta, long long window_steps):
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t steps = U.shape[0]
    cdef Py_ssize_t i, j
    cdef double u, no, nm, p1, k, h = dt, p_max = 0.0
    cdef double a1, a2, a3, a4, b1, b2, b3, b4, c1, c2, c3, c4
    cdef bint monitored
    cdef long long s
    with nogil:
        for i in range(n):
            u = y[i, 0]
            no = y[i, 1]
            nm = y[i, 2]
            s = since[i]
            for j in range(steps):
                monitored = s >= window_steps
                p1 = 2.0 * k_eta * no * dt if monitored else 0.0
                if p1 > p_max:
                    p_max = p1
                k = 0.0
                if U[j, i] < p1:
                    logp[i] += log(p1)
                    nm = nm + u * u / (4.0 * no)
                    u = 2.0 * u
                    no = 2.0 * no
                    nclicks[i] += 1
                    if isnan(first_click[i]):
                        first_click[i] = (step0 + j) * dt
                    s = 0
                elif monitored:
                    logp[i] += log1p(-p1)
                    k = k_eta
                _rhs(stokes, G, kap, gam, Nbar, k, u, no, nm, &a1, &b1, &c1)
                _rhs(stokes, G, kap, gam, Nbar, k, u + 0.5 * h * a1, no + 0.5 * h * b1, nm + 0.5 * h * c1,
                     &a2, &b2, &c2)
                _rhs(stokes, G, kap, gam, Nbar, k, u + 0.5 * h * a2, no + 0.5 * h * b2, nm + 0.5 * h * c2,
                     &a3, &b3, &c3)
                _rhs(stokes, G, kap, gam, Nbar, k, u + h * a3, no + h * b3, nm + h * c3, &a4, &b4, &c4)
                u = u + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
                no = no + (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
                nm = nm + (h / 6.0) * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
                s += 1
            y[i, 0] = u
            y[i, 1] = no
            y[i, 2] = nm
            since[i] = s
    return p_max
