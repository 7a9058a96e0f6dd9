"""Numba @njit kernel implementations (default backend).

Same contracts as _kernels_numpy; see that module for the step equations.
The tridiagonal systems are solved by the Thomas algorithm, so PDE results
may differ from the fallback at the LAPACK-vs-Thomas rounding level; the SDE
and Metropolis kernels replicate the fallback arithmetic exactly.
"""

from __future__ import annotations

import numpy as np
from numba import njit

BACKEND_NAME = "numba"


@njit(cache=True)
def _thomas(lo, di, up, rhs, cp, dp):
    """Solve the tridiagonal system (lo, di, up) x = rhs; cp/dp are scratch."""
    n = rhs.shape[0]
    cp[0] = up[0] / di[0]
    dp[0] = rhs[0] / di[0]
    for i in range(1, n):
        m = di[i] - lo[i] * cp[i - 1]
        cp[i] = up[i] / m
        dp[i] = (rhs[i] - lo[i] * dp[i - 1]) / m
    x = np.empty(n)
    x[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


@njit(cache=True)
def parisi_march(u, a_steps, m_steps, dx, store_flags):
    nx = u.shape[0]
    nsteps = a_steps.shape[0]
    n_store = 0
    for k in range(nsteps):
        if store_flags[k]:
            n_store += 1
    out = np.empty((n_store, nx))
    u = u.copy()
    lo = np.empty(nx)
    di = np.empty(nx)
    up = np.empty(nx)
    rhs = np.empty(nx)
    cp = np.empty(nx)
    dp = np.empty(nx)
    pos = 0
    for k in range(nsteps):
        a = a_steps[k]
        m = m_steps[k]
        c = a / (dx * dx)
        for i in range(1, nx - 1):
            s = (u[i + 1] - u[i - 1]) / (2.0 * dx)
            rhs[i] = u[i] + (a * m) * (s * s)
        rhs[0] = u[0] + (a * m) + 2.0 * a / dx
        rhs[nx - 1] = u[nx - 1] + (a * m) + 2.0 * a / dx
        for i in range(nx):
            lo[i] = -c
            di[i] = 1.0 + 2.0 * c
            up[i] = -c
        up[0] = -2.0 * c
        lo[nx - 1] = -2.0 * c
        u = _thomas(lo, di, up, rhs, cp, dp)
        if store_flags[k]:
            out[pos] = u
            pos += 1
    return out


@njit(cache=True)
def advect_march(w, a_steps, m_steps, it0s, tws, ux_store, dx):
    nx = w.shape[0]
    nsteps = a_steps.shape[0]
    w = w.copy()
    lo = np.empty(nx)
    di = np.empty(nx)
    up = np.empty(nx)
    cp = np.empty(nx)
    dp = np.empty(nx)
    for k in range(nsteps):
        a = a_steps[k]
        m = m_steps[k]
        c = a / (dx * dx)
        it = it0s[k]
        tw = tws[k]
        for i in range(nx):
            ux = ux_store[it, i] + tw * (ux_store[it + 1, i] - ux_store[it, i])
            b = (a * m / dx) * ux
            lo[i] = -c + b
            di[i] = 1.0 + 2.0 * c
            up[i] = -c - b
        up[0] = -2.0 * c
        lo[nx - 1] = -2.0 * c
        w = _thomas(lo, di, up, w, cp, dp)
    return w


@njit(cache=True)
def sde_block(x, z, ux_store, it0s, tws, drifts, sqs, x0, dx):
    nx = ux_store.shape[1]
    nsteps = z.shape[0]
    npaths = x.shape[0]
    for k in range(nsteps):
        it = it0s[k]
        tw = tws[k]
        drift = drifts[k]
        sq = sqs[k]
        for p in range(npaths):
            pos = (x[p] - x0) / dx
            j = int(pos)
            if j < 0:
                j = 0
            elif j > nx - 2:
                j = nx - 2
            f = pos - j
            if f < 0.0:
                f = 0.0
            elif f > 1.0:
                f = 1.0
            u0 = ux_store[it, j] + f * (ux_store[it, j + 1] - ux_store[it, j])
            u1 = ux_store[it + 1, j] + f * (ux_store[it + 1, j + 1] - ux_store[it + 1, j])
            u = u0 + tw * (u1 - u0)
            x[p] += drift * u + sq * z[k, p]
    return x


@njit(cache=True)
def interp_ux(ux_store, it0, tw, x, x0, dx):
    nx = ux_store.shape[1]
    n = x.shape[0]
    out = np.empty(n)
    for p in range(n):
        pos = (x[p] - x0) / dx
        j = int(pos)
        if j < 0:
            j = 0
        elif j > nx - 2:
            j = nx - 2
        f = pos - j
        if f < 0.0:
            f = 0.0
        elif f > 1.0:
            f = 1.0
        u0 = ux_store[it0, j] + f * (ux_store[it0, j + 1] - ux_store[it0, j])
        u1 = ux_store[it0 + 1, j] + f * (ux_store[it0 + 1, j + 1] - ux_store[it0 + 1, j])
        out[p] = u0 + tw * (u1 - u0)
    return out


@njit(cache=True)
def metropolis_sweeps(spins, local2, j2sym, use3, g3sum, g3diag, c3, h, sites, urand):
    n = spins.shape[0]
    accepts = 0
    for f in range(sites.shape[0]):
        k = sites[f]
        s_k = spins[k]
        d = -2.0 * s_k * (local2[k] + h)
        if use3:
            s3 = 0.0
            for i in range(n):
                if i == k:
                    continue
                row = 0.0
                for j in range(n):
                    if j == k:
                        continue
                    row += g3sum[k, i, j] * spins[j]
                s3 += spins[i] * row
            d += -2.0 * s_k * c3 * (s3 + g3diag[k])
        if d >= 0.0 or urand[f] < np.exp(d):
            spins[k] = -s_k
            new_s = spins[k]
            for i in range(n):
                local2[i] += j2sym[i, k] * (2.0 * new_s)
            accepts += 1
    return accepts
