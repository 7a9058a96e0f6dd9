"""Finite-size model: dense couplings, Metropolis sampling, decomposition checks.

Couplings are dense i.i.d. standard normal tensors per active degree (capped
at degree 3 and N <= 512); the energy includes an explicit h * sum(sigma)
field term so finite-size runs are comparable with the asymptotic machinery,
whose processes start at h.  The Gibbs weight is exp(H), temperatures live
inside the mixture coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .backend import get_kernels
from .errors import ConfigError
from .seeding import seed_sequence
from .mixture import MixtureSpec

N_MAX = 512
P_MAX = 3


@dataclass(frozen=True)
class CouplingRealization:
    """Dense coupling tensors per degree plus the external field."""

    N: int
    tensors: dict
    h: float = 0.0

    def __post_init__(self):
        if self.N > N_MAX:
            raise ConfigError(f"N={self.N} above the dense-tensor cap {N_MAX}")
        for p in self.tensors:
            if p > P_MAX:
                raise ConfigError(f"degree {p} unsupported (dense cost N^p)")


def sample_couplings(N: int, mixture: MixtureSpec, rng_seed=0, h: float = 0.0) -> CouplingRealization:
    """Draw i.i.d. standard normal tensors for every active degree."""
    degrees = [p for p, b in mixture.terms if b > 0]
    if any(p > P_MAX for p in degrees):
        raise ConfigError(f"degrees above {P_MAX} unsupported (dense cost N^p)")
    if N > N_MAX:
        raise ConfigError(f"N={N} above the dense-tensor cap {N_MAX}")
    rng = np.random.default_rng(rng_seed)
    tensors = {p: rng.standard_normal((N,) * p) for p in degrees}
    return CouplingRealization(N=N, tensors=tensors, h=float(h))


def _scale(mixture: MixtureSpec, p: int, N: int) -> float:
    return mixture.coefficient(p) * N ** (-(p - 1) / 2.0)


def hamiltonian(coupling: CouplingRealization, mixture: MixtureSpec, sigma: np.ndarray) -> float:
    """Energy of a configuration, field term included."""
    sigma = np.asarray(sigma, dtype=float)
    N = coupling.N
    total = coupling.h * sigma.sum()
    for p, g in coupling.tensors.items():
        c = _scale(mixture, p, N)
        if p == 2:
            total += c * float(sigma @ g @ sigma)
        elif p == 3:
            total += c * float(np.einsum("ijk,i,j,k->", g, sigma, sigma, sigma))
        else:
            raise ConfigError(f"degree {p} unsupported")
    return float(total)


def delta_energy(
    coupling: CouplingRealization, mixture: MixtureSpec, sigma: np.ndarray, k: int
) -> float:
    """Exact energy change of flipping spin k (matches full recomputation)."""
    sigma = np.asarray(sigma, dtype=float)
    N = coupling.N
    s_k = sigma[k]
    d = -2.0 * s_k * coupling.h
    for p, g in coupling.tensors.items():
        c = _scale(mixture, p, N)
        if p == 2:
            row = g[k, :] + g[:, k]
            d += -2.0 * s_k * c * (float(row @ sigma) - 2.0 * g[k, k] * s_k)
        elif p == 3:
            v = sigma.copy()
            v[k] = 0.0
            gsum = g[k, :, :] + g[:, k, :] + g[:, :, k]
            d += -2.0 * s_k * c * (float(v @ gsum @ v) + g[k, k, k])
    return float(d)


@dataclass
class ChainState:
    """Mutable Metropolis chain state; energy re-derived at checkpoints."""

    spins: np.ndarray
    energy: float
    sweeps_done: int = 0

    def check_energy(self, coupling: CouplingRealization, mixture: MixtureSpec, tol=1e-8):
        fresh = hamiltonian(coupling, mixture, self.spins)
        if abs(fresh - self.energy) > tol * max(1.0, abs(fresh)):
            raise ConfigError(
                f"stored energy {self.energy} drifted from recomputation {fresh}"
            )
        self.energy = fresh


@dataclass(frozen=True)
class GibbsResult:
    """Sampling summary for one coupling realization."""

    mean_overlap: float
    se_overlap: float
    overlap_values: np.ndarray
    overlap_counts: np.ndarray
    site_magnetization: float
    site_pair_moment: float
    acceptance_rate: float
    rhat: float
    converged: bool
    n_samples: int


def _rhat(series: np.ndarray) -> float:
    """Split R-hat across chains on a per-chain scalar series (chains, t)."""
    c, t = series.shape
    half = t // 2
    if half < 2:
        return np.inf
    chunks = np.concatenate((series[:, :half], series[:, half : 2 * half]), axis=0)
    means = chunks.mean(axis=1)
    variances = chunks.var(axis=1, ddof=1)
    w = variances.mean()
    b = half * means.var(ddof=1)
    if w <= 0:
        return 1.0
    return float(np.sqrt(((half - 1) / half * w + b / half) / w))


def gibbs_sample(
    coupling: CouplingRealization,
    mixture: MixtureSpec,
    sweeps: int = 4000,
    n_chains: int = 2,
    rng_seed=0,
    burn_fraction: float = 0.25,
    thin: int = 2,
) -> GibbsResult:
    """Metropolis single-flip chains; overlaps from time-matched chain pairs.

    Random-scan proposals (N per sweep) accepted with min(1, exp(dH)).
    The overlap mean and its batch-mean standard error use samples after a
    burn-in of burn_fraction * sweeps, every `thin` sweeps.
    """
    if n_chains < 2:
        raise ConfigError("need >= 2 chains for paired overlaps")
    N = coupling.N
    kern = get_kernels()
    rng = np.random.default_rng(rng_seed)
    c2 = _scale(mixture, 2, N) if 2 in coupling.tensors else 0.0
    j2sym = np.zeros((N, N))
    if 2 in coupling.tensors:
        g2 = coupling.tensors[2]
        j2sym = c2 * (g2 + g2.T)
        np.fill_diagonal(j2sym, 0.0)
    use3 = 3 in coupling.tensors
    if use3:
        g3 = coupling.tensors[3]
        g3sum = g3 + np.transpose(g3, (1, 0, 2)) + np.transpose(g3, (1, 2, 0))
        g3diag = np.einsum("iii->i", g3).copy()
        c3 = _scale(mixture, 3, N)
    else:
        g3sum = np.zeros((1, 1, 1))
        g3diag = np.zeros(N)
        c3 = 0.0

    spins = [np.where(rng.random(N) < 0.5, -1.0, 1.0) for _ in range(n_chains)]
    locals2 = [j2sym @ s for s in spins]
    burn = int(burn_fraction * sweeps)
    accepts = 0
    proposals = 0
    overlaps = []
    mags = []
    pair_site = []
    energies = [[] for _ in range(n_chains)]
    for sweep in range(sweeps):
        for c in range(n_chains):
            sites = rng.integers(0, N, size=N)
            urand = rng.random(N)
            accepts += kern.metropolis_sweeps(
                spins[c], locals2[c], j2sym, use3, g3sum, g3diag, c3, coupling.h, sites, urand
            )
            proposals += N
        if sweep >= burn and (sweep - burn) % thin == 0:
            for a in range(n_chains):
                for b in range(a + 1, n_chains):
                    overlaps.append(float(spins[a] @ spins[b]) / N)
                    pair_site.append(float(spins[a][0] * spins[b][0]))
                mags.append(float(spins[a][0]))
                energies[a].append(hamiltonian(coupling, mixture, spins[a]))
    overlaps = np.asarray(overlaps)
    n_batch = min(30, max(2, len(overlaps) // 4))
    edges = np.linspace(0, len(overlaps), n_batch + 1).astype(int)
    bmeans = np.array([overlaps[a:b].mean() for a, b in zip(edges[:-1], edges[1:])])
    se = float(bmeans.std(ddof=1) / np.sqrt(n_batch))
    values, counts = np.unique(overlaps.round(12), return_counts=True)
    rhat = _rhat(np.asarray(energies))
    return GibbsResult(
        mean_overlap=float(overlaps.mean()),
        se_overlap=se,
        overlap_values=values,
        overlap_counts=counts,
        site_magnetization=float(np.mean(mags)),
        site_pair_moment=float(np.mean(pair_site)),
        acceptance_rate=accepts / max(proposals, 1),
        rhat=rhat,
        converged=bool(rhat < 1.1),
        n_samples=len(overlaps),
    )


def disorder_average_overlap(
    N: int,
    mixture: MixtureSpec,
    h: float,
    n_realizations: int = 8,
    sweeps: int = 4000,
    n_chains: int = 2,
    rng_seed=0,
) -> dict:
    """E<R12> over coupling redraws; the standard error combines realizations."""
    root = seed_sequence(rng_seed)
    vals = []
    warn = False
    per = []
    for seed in root.spawn(n_realizations):
        cpl_seed, chain_seed = seed.spawn(2)
        coupling = sample_couplings(N, mixture, rng_seed=cpl_seed, h=h)
        res = gibbs_sample(coupling, mixture, sweeps=sweeps, n_chains=n_chains,
                           rng_seed=chain_seed)
        vals.append(res.mean_overlap)
        warn = warn or not res.converged
        per.append(res)
    vals = np.asarray(vals)
    return {
        "mean_overlap": float(vals.mean()),
        "se": float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0,
        "convergence_warning": warn,
        "realizations": per,
    }


# ---------------------------------------------------------------------------
# Gaussian decomposition of the energy around one cavity coordinate


def decomposition_pieces(coupling: CouplingRealization, mixture: MixtureSpec, sigma: np.ndarray):
    """Split H(sigma) = H_bulk(rho) + sigma_1 y(rho) + r(sigma_1, rho).

    Pure-degree couplings only.  y collects the terms where site 1 appears
    exactly once; r the terms where it appears twice or more (for degree 3,
    its odd part is the single entry g_111, which drives the flip-difference
    bound).  Returns (bulk, y, r_plus, r_minus) with r evaluated at
    sigma_1 = +1 / -1.
    """
    if len(coupling.tensors) != 1:
        raise ConfigError("decomposition check runs on pure-degree couplings")
    (p, g), = coupling.tensors.items()
    N = coupling.N
    c = _scale(mixture, p, N)
    rho = np.asarray(sigma, dtype=float).copy()
    rho[0] = 0.0  # mask the cavity coordinate
    if p == 2:
        bulk = c * float(rho @ g @ rho)
        y = c * float((g[0, :] + g[:, 0]) @ rho)
        r_even = c * g[0, 0]
        r_odd = 0.0
    else:
        bulk = c * float(np.einsum("ijk,i,j,k->", g, rho, rho, rho))
        gsum = g[0, :, :] + g[:, 0, :] + g[:, :, 0]
        y = c * float(rho @ gsum @ rho)
        pair = (
            np.einsum("j,j->", g[0, 0, :], rho)
            + np.einsum("j,j->", g[0, :, 0], rho)
            + np.einsum("j,j->", g[:, 0, 0], rho)
        )
        r_even = c * float(pair)
        r_odd = c * float(g[0, 0, 0])
    return bulk, y, r_even + r_odd, r_even - r_odd


def decomposition_check(
    N: int, mixture: MixtureSpec, n_redraws: int = 10_000, rng_seed=0, overlap: float = 0.5
) -> dict:
    """Empirical covariance checks of the cavity decomposition pieces.

    Over coupling redraws at two fixed configurations with the given overlap:
    verifies Cov(y(s1), y(s2)) against the slope function at the masked
    overlap, the flip-difference variance of r against its exact combinatorial
    value, and reports the exponential moment of twice the flip difference.
    """
    if N > 64:
        raise ConfigError("decomposition check is desk-scale: N <= 64")
    degrees = [p for p, b in mixture.terms if b > 0]
    if len(degrees) != 1:
        raise ConfigError("decomposition check runs on pure-degree mixtures")
    p = degrees[0]
    rng = np.random.default_rng(rng_seed)
    s1 = np.ones(N)
    s2 = np.ones(N)
    n_flip = int(round((1.0 - overlap) * N / 2.0))
    s2[1 : 1 + n_flip] = -1.0  # site 1 kept aligned; overlap approx as requested
    r12 = float(s1 @ s2) / N

    ys = np.empty((n_redraws, 2))
    dr = np.empty(n_redraws)
    for i in range(n_redraws):
        coupling = sample_couplings(N, mixture, rng_seed=rng, h=0.0)
        _, y1, rp, rm = decomposition_pieces(coupling, mixture, s1)
        _, y2, _, _ = decomposition_pieces(coupling, mixture, s2)
        ys[i] = (y1, y2)
        dr[i] = rp - rm
    rho_overlap = float(s1[1:] @ s2[1:]) / N  # masked-coordinate inner product / N
    cov = float(np.cov(ys[:, 0], ys[:, 1])[0, 1])
    cov_theory = float(mixture.xi(rho_overlap, 1))
    cov_se = float(
        np.std(ys[:, 0] * ys[:, 1], ddof=1) / np.sqrt(n_redraws)
    )
    var_dr = float(dr.var(ddof=1))
    beta = mixture.coefficient(p)
    if p == 2:
        var_theory = 0.0
    else:
        var_theory = 4.0 * beta**2 / N ** (p - 1) * 1.0  # single odd term: g_111
    var_se = float(np.std(dr**2, ddof=1) / np.sqrt(n_redraws))
    exp_moment = float(np.exp(2.0 * np.abs(dr)).mean())
    return {
        "overlap": r12,
        "masked_overlap": rho_overlap,
        "cov_y": cov,
        "cov_y_theory": cov_theory,
        "cov_y_se": cov_se,
        "var_flip_diff": var_dr,
        "var_flip_diff_theory": var_theory,
        "var_flip_diff_se": var_se,
        "exp_moment_flip_diff": exp_moment,
        "n_redraws": n_redraws,
    }
