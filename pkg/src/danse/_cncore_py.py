"""Pure-Python Crank-Nicolson kernel (fallback for :mod:`danse._cncore`).

Same algorithm and return contract as the compiled kernel, written with
plain Python complex arithmetic so it runs without a C toolchain.
"""

from __future__ import annotations


def _solve_mid(h, g, v, gam, u, r, w, refactor):
    # (1 + i h H) m = r, H = tridiag(-1, v - i gam + g u, -1); w holds 1/pivot
    n = len(r)
    ih = 1j * h
    h2 = h * h
    if refactor:
        w[0] = 1.0 / ((1.0 + h * gam[0]) + ih * (v[0] + g * u[0]))
        for i in range(1, n):
            b = (1.0 + h * gam[i]) + ih * (v[i] + g * u[i])
            w[i] = 1.0 / (b + h2 * w[i - 1])
    dp = [0j] * n
    dp[0] = r[0] * w[0]
    for i in range(1, n):
        dp[i] = (r[i] + ih * dp[i - 1]) * w[i]
    m = [0j] * n
    m[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        m[i] = dp[i] + ih * w[i] * m[i + 1]
    return m


def cn_steps(c, v, gamma, g, dt, nsteps, nl_iters, nl_tol):
    """Advance the complex array ``c`` in place; see ``_cncore.cn_steps``."""
    n = len(c)
    h = 0.5 * dt
    vv = [float(x) for x in v]
    gg = [float(x) for x in gamma]
    cur = [complex(x) for x in c]
    w = [0j] * n
    k = 0
    total = 0
    res = 0.0
    tol2 = nl_tol * nl_tol
    if g == 0.0:
        u = [0.0] * n
        for k in range(nsteps):
            m = _solve_mid(h, 0.0, vv, gg, u, cur, w, k == 0)
            cur = [2.0 * mi - ci for mi, ci in zip(m, cur)]
        k = nsteps
        total = nsteps
    else:
        while k < nsteps:
            a2 = [z.real * z.real + z.imag * z.imag for z in cur]
            guess = list(cur)
            it = 0
            while True:
                u = [0.5 * (a + z.real * z.real + z.imag * z.imag) for a, z in zip(a2, guess)]
                m = _solve_mid(h, g, vv, gg, u, cur, w, True)
                it += 1
                res2 = 0.0
                for i in range(n):
                    z = 2.0 * m[i] - cur[i]
                    d = z - guess[i]
                    d2 = d.real * d.real + d.imag * d.imag
                    if d2 > res2:
                        res2 = d2
                    guess[i] = z
                if res2 < tol2 or it >= nl_iters:
                    break
            total += it
            res = res2 ** 0.5
            if res2 >= tol2:
                break
            cur = guess
            k += 1
    c[:] = cur
    return k, res, total
