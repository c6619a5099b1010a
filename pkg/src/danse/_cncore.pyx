# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Crank-Nicolson kernel for the disordered nonlinear lattice.

Mirrors :mod:`danse._cncore_py` step for step; both must stay in sync.
Complex vectors are handled as interleaved (re, im) doubles.
"""

from libc.stdlib cimport malloc, free


cdef void _factor_forward(int n, double h, double g, const double *v, const double *gam,
                          const double *u, const double *r, double *w, double *dp) noexcept nogil:
    # Thomas forward sweep for (1 + i h H) m = r, H = tridiag(-1, v - i gam + g u, -1).
    # w <- 1/pivot, dp <- eliminated rhs.
    cdef int i
    cdef double h2 = h * h
    cdef double pr, pi, d, qr, qi, wr, wi
    cdef double dpr = 0.0, dpi = 0.0, wpr = 0.0, wpi = 0.0
    for i in range(n):
        pr = 1.0 + h * gam[i] + h2 * wpr
        pi = h * (v[i] + g * u[i]) + h2 * wpi
        d = 1.0 / (pr * pr + pi * pi)
        wr = pr * d
        wi = -pi * d
        qr = r[2 * i] - h * dpi
        qi = r[2 * i + 1] + h * dpr
        dpr = qr * wr - qi * wi
        dpi = qr * wi + qi * wr
        w[2 * i] = wr
        w[2 * i + 1] = wi
        dp[2 * i] = dpr
        dp[2 * i + 1] = dpi
        wpr = wr
        wpi = wi


cdef void _forward(int n, double h, const double *r, const double *w, double *dp) noexcept nogil:
    cdef int i
    cdef double qr, qi, wr, wi
    cdef double dpr = 0.0, dpi = 0.0
    for i in range(n):
        wr = w[2 * i]
        wi = w[2 * i + 1]
        qr = r[2 * i] - h * dpi
        qi = r[2 * i + 1] + h * dpr
        dpr = qr * wr - qi * wi
        dpi = qr * wi + qi * wr
        dp[2 * i] = dpr
        dp[2 * i + 1] = dpi


cdef double _backward_update(int n, double h, const double *w, const double *dp,
                             const double *old, double *out) noexcept nogil:
    # m_i = dp_i + i h w_i m_{i+1}; out <- 2 m - old. Returns max |out_new - out_prev|^2.
    cdef int i
    cdef double mr = 0.0, mi = 0.0, tr, ti, zr, zi, er, ei, d2
    cdef double res2 = 0.0
    for i in range(n - 1, -1, -1):
        tr = w[2 * i] * mr - w[2 * i + 1] * mi
        ti = w[2 * i] * mi + w[2 * i + 1] * mr
        mr = dp[2 * i] - h * ti
        mi = dp[2 * i + 1] + h * tr
        zr = 2.0 * mr - old[2 * i]
        zi = 2.0 * mi - old[2 * i + 1]
        er = zr - out[2 * i]
        ei = zi - out[2 * i + 1]
        d2 = er * er + ei * ei
        if d2 > res2:
            res2 = d2
        out[2 * i] = zr
        out[2 * i + 1] = zi
    return res2


def cn_steps(double complex[::1] c, const double[::1] v, const double[::1] gamma, double g,
             double dt, long nsteps, int nl_iters, double nl_tol):
    """Advance ``c`` in place by ``nsteps`` steps of size ``dt``.

    Returns ``(steps_done, residual, iterations)``. ``steps_done < nsteps``
    signals fixed-point failure on step ``steps_done``; ``c`` then holds the
    state from before the failing step and ``residual`` the last change.
    """
    cdef int n = c.shape[0]
    cdef long k = 0
    cdef long total_iters = 0
    cdef int it, i
    cdef double h = 0.5 * dt
    cdef double tol2 = nl_tol * nl_tol
    cdef double res2 = 0.0
    cdef double *cc = <double *> &c[0]
    cdef double *w = <double *> malloc(2 * n * sizeof(double))
    cdef double *dp = <double *> malloc(2 * n * sizeof(double))
    cdef double *old = <double *> malloc(2 * n * sizeof(double))
    cdef double *guess = <double *> malloc(2 * n * sizeof(double))
    cdef double *u = <double *> malloc(n * sizeof(double))
    cdef double *a2 = <double *> malloc(n * sizeof(double))
    try:
        with nogil:
            if g == 0.0:
                for i in range(n):
                    u[i] = 0.0
                while k < nsteps:
                    for i in range(2 * n):
                        old[i] = cc[i]
                    if k == 0:
                        _factor_forward(n, h, 0.0, &v[0], &gamma[0], u, old, w, dp)
                    else:
                        _forward(n, h, old, w, dp)
                    _backward_update(n, h, w, dp, old, cc)
                    k += 1
                    total_iters += 1
            else:
                while k < nsteps:
                    for i in range(n):
                        old[2 * i] = cc[2 * i]
                        old[2 * i + 1] = cc[2 * i + 1]
                        guess[2 * i] = cc[2 * i]
                        guess[2 * i + 1] = cc[2 * i + 1]
                        a2[i] = cc[2 * i] * cc[2 * i] + cc[2 * i + 1] * cc[2 * i + 1]
                    it = 0
                    while True:
                        for i in range(n):
                            u[i] = 0.5 * (a2[i] + guess[2 * i] * guess[2 * i]
                                          + guess[2 * i + 1] * guess[2 * i + 1])
                        _factor_forward(n, h, g, &v[0], &gamma[0], u, old, w, dp)
                        res2 = _backward_update(n, h, w, dp, old, guess)
                        it += 1
                        if res2 < tol2 or it >= nl_iters:
                            break
                    total_iters += it
                    if res2 >= tol2:
                        break
                    for i in range(2 * n):
                        cc[i] = guess[i]
                    k += 1
    finally:
        free(w)
        free(dp)
        free(old)
        free(guess)
        free(u)
        free(a2)
    return k, res2 ** 0.5, total_iters
