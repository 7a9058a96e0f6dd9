"""Pure-numpy kernel implementations (fallback backend).

Semantics must match _kernels_numba exactly; the numba build is the same
arithmetic with the path/space loops compiled.  Elementwise operation order is
kept identical so the two backends agree to the last ulp on the SDE kernels.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded

BACKEND_NAME = "numpy"


def parisi_march(u, a_steps, m_steps, dx, store_flags):
    """March the backward semilinear slice u through len(a_steps) steps.

    Step k solves (I - a_k D2) u_new = u + a_k m_k (D1 u)^2 with slope
    boundary conditions du/dx = -1 / +1 at the two grid ends.  Returns the
    slices stored after each step flagged in store_flags (int8).
    """
    nx = u.shape[0]
    nsteps = a_steps.shape[0]
    n_store = int(store_flags.sum())
    out = np.empty((n_store, nx))
    u = u.copy()
    ab = np.zeros((3, nx))
    rhs = np.empty(nx)
    sq = np.empty(nx)
    pos = 0
    for k in range(nsteps):
        a = a_steps[k]
        m = m_steps[k]
        c = a / (dx * dx)
        # squared slope, centered inside, exact +-1 at the ends
        sq[1:-1] = ((u[2:] - u[:-2]) / (2.0 * dx)) ** 2
        sq[0] = 1.0
        sq[-1] = 1.0
        rhs[:] = u + (a * m) * sq
        rhs[0] += 2.0 * a / dx
        rhs[-1] += 2.0 * a / dx
        ab[0, 1:] = -c
        ab[0, 1] = -2.0 * c
        ab[1, :] = 1.0 + 2.0 * c
        ab[2, :-1] = -c
        ab[2, -2] = -2.0 * c
        u = solve_banded((1, 1), ab, rhs)
        if store_flags[k]:
            out[pos] = u
            pos += 1
    return out


def advect_march(w, a_steps, m_steps, it0s, tws, ux_store, dx):
    """March a backward moment slice w with drift term 2 m ux(t,x) w_x.

    Step k solves (I - a_k (D2 + 2 m_k ux D1)) w_new = w with zero-slope
    boundaries; ux at step k is the time interpolation tws[k] between stored
    rows it0s[k] and it0s[k]+1.
    """
    nx = w.shape[0]
    nsteps = a_steps.shape[0]
    w = w.copy()
    ab = np.zeros((3, nx))
    for k in range(nsteps):
        a = a_steps[k]
        m = m_steps[k]
        c = a / (dx * dx)
        row0 = ux_store[it0s[k]]
        row1 = ux_store[it0s[k] + 1]
        ux = row0 + tws[k] * (row1 - row0)
        b = (a * m / dx) * ux
        ab[0, 1:] = -c - b[:-1]
        ab[0, 1] = -2.0 * c
        ab[1, :] = 1.0 + 2.0 * c
        ab[2, :-1] = -c + b[1:]
        ab[2, -2] = -2.0 * c
        w = solve_banded((1, 1), ab, w)
    return w


def sde_block(x, z, ux_store, it0s, tws, drifts, sqs, x0, dx):
    """Advance the path array x through one block of Euler steps, in place.

    Per step k and path p:
        u  = bilinear ux at (time weight tws[k], position x[p])
        x[p] += drifts[k] * u + sqs[k] * z[k, p]
    Positions beyond the spatial grid clamp to the edge cells, where the
    slope field has saturated to +-1 within rounding.
    """
    nx = ux_store.shape[1]
    nsteps = z.shape[0]
    for k in range(nsteps):
        row0 = ux_store[it0s[k]]
        row1 = ux_store[it0s[k] + 1]
        tw = tws[k]
        pos = (x - x0) / dx
        j = np.clip(pos.astype(np.int64), 0, nx - 2)
        f = np.clip(pos - j, 0.0, 1.0)
        u0 = row0[j] + f * (row0[j + 1] - row0[j])
        u1 = row1[j] + f * (row1[j + 1] - row1[j])
        u = u0 + tw * (u1 - u0)
        x += drifts[k] * u + sqs[k] * z[k]
    return x


def interp_ux(ux_store, it0, tw, x, x0, dx):
    """Vectorized bilinear lookup of the stored slope field at one time."""
    nx = ux_store.shape[1]
    row0 = ux_store[it0]
    row1 = ux_store[it0 + 1]
    pos = (x - x0) / dx
    j = np.clip(pos.astype(np.int64), 0, nx - 2)
    f = np.clip(pos - j, 0.0, 1.0)
    u0 = row0[j] + f * (row0[j + 1] - row0[j])
    u1 = row1[j] + f * (row1[j + 1] - row1[j])
    return u0 + tw * (u1 - u0)


def metropolis_sweeps(spins, local2, j2sym, use3, g3sum, g3diag, c3, h, sites, urand):
    """Run single-flip Metropolis over the given site sequence, in place.

    spins is +-1 float64; local2 caches j2sym @ spins and is kept current.
    The Gibbs weight is exp(H), so a flip of site k with energy change d
    is accepted when urand < exp(d).  Returns the acceptance count.
    """
    accepts = 0
    for f in range(sites.shape[0]):
        k = sites[f]
        s_k = spins[k]
        d = -2.0 * s_k * (local2[k] + h)
        if use3:
            v = spins.copy()
            v[k] = 0.0
            d += -2.0 * s_k * c3 * (v @ g3sum[k] @ v + g3diag[k])
        if d >= 0.0 or urand[f] < np.exp(d):
            spins[k] = -s_k
            local2 += j2sym[:, k] * (2.0 * spins[k])
            accepts += 1
    return accepts
