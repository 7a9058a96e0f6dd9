"""Acceptance criteria: one function per criterion, pinned configs and seeds.

Each criterion returns a CriterionResult whose `line()` is a one-line
PASS/FAIL summary; `run_all` executes a subset or all of them.  Tolerances
come from the package contract (Monte Carlo checks at three standard errors
of the reported estimator, deterministic checks at fixed absolute bounds) and
are not adjustable here.
"""

from __future__ import annotations

import filecmp
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mixture import MixtureSpec, ParisiMeasure
from .parisi import cole_hopf_levels, solve_pde

SK2 = dict(mixture=MixtureSpec(terms=[(2, 1.0)]),
           measure=ParisiMeasure(atoms=[(0.3, 0.5), (0.7, 0.5)], h=0.3))


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    details: str
    runtime: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  C{self.number:<2d} {self.name}: {self.details} [{self.runtime:.1f}s]"


def _result(number, name, passed, details, t0):
    return CriterionResult(number, name, bool(passed), details, time.time() - t0)


def criterion_1() -> CriterionResult:
    """Slope field equals tanh above the top atom time, to 1e-4."""
    t0 = time.time()
    worst = 0.0
    terminal_exact = True
    for beta in (0.5, 1.0):
        for h in (0.0, 0.3):
            for atoms in ([(0.5, 1.0)], [(0.3, 0.5), (0.7, 0.5)]):
                mix = MixtureSpec(terms=[(2, beta)])
                meas = ParisiMeasure(atoms=atoms, h=h)
                sol = solve_pde(mix, meas)
                plateau = sol.ts >= meas.q_star - 1e-12
                err = float(np.abs(sol.ux[plateau] - np.tanh(sol.xs)[None, :]).max())
                worst = max(worst, err)
                ax = np.abs(sol.xs)
                exact_terminal = ax + np.log1p(np.exp(-2.0 * ax)) - np.log(2.0)
                terminal_exact &= bool(np.array_equal(sol.u[-1], exact_terminal))
    return _result(1, "plateau identity", worst <= 1e-4 and terminal_exact,
                   f"max |ux - tanh| = {worst:.2e} (tol 1e-4) over 8 configs; "
                   f"terminal slice exact: {terminal_exact}", t0)


def criterion_2() -> CriterionResult:
    """Level recursion agrees with finite differences at (0, h) to 5e-3."""
    t0 = time.time()
    sol = solve_pde(SK2["mixture"], SK2["measure"])
    levels = cole_hopf_levels(SK2["mixture"], SK2["measure"])
    h = SK2["measure"].h
    diff = abs(levels.evaluate(0, h) - sol.query_u(0.0, h))
    return _result(2, "level recursion vs finite differences", diff <= 5e-3,
                   f"|Z0(h) - u(0,h)| = {diff:.2e} (tol 5e-3)", t0)


def criterion_3() -> CriterionResult:
    """Slope along the local field is a martingale: 10 checkpoints, 1e5 paths."""
    from .diffusion import ensemble_paths

    t0 = time.time()
    sol = solve_pde(SK2["mixture"], SK2["measure"])
    n = 100_000
    cps = np.linspace(0.1, 1.0, 10)
    res = ensemble_paths(sol, np.array([[0.7]]), n, cps, rng_seed=301,
                         record_magnetization=True)
    m0 = sol.query_ux(0.0, SK2["measure"].h)
    worst = 0.0
    for icp in range(len(cps)):
        m = res.M[icp, 0]
        z = abs(m.mean() - m0) / (m.std(ddof=1) / np.sqrt(n))
        worst = max(worst, z)
    return _result(3, "magnetization martingale", worst <= 3.0,
                   f"worst |z| = {worst:.2f} over 10 checkpoints, {n} paths", t0)


def criterion_4() -> CriterionResult:
    """Covariation of two coupled cavity fields matches the slope function."""
    from .diffusion import ensemble_paths

    t0 = time.time()
    sol = solve_pde(SK2["mixture"], SK2["measure"])
    mix = SK2["mixture"]
    q12 = 0.3
    n = 30_000
    cps = np.linspace(0.1, 1.0, 10)
    res = ensemble_paths(sol, np.array([[0.7, q12], [q12, 0.7]]), n, cps,
                         rng_seed=401, bracket_pairs=[(0, 1)])
    table = res.brackets[(0, 1)]
    worst = 0.0
    for icp, t in enumerate(cps):
        target = float(mix.xi(min(t, q12), 1))
        vals = table[icp]
        z = abs(vals.mean() - target) / (vals.std(ddof=1) / np.sqrt(n))
        worst = max(worst, z)
    return _result(4, "cavity bracket relation", worst <= 3.0,
                   f"worst |z| = {worst:.2f} vs xi'(t^q) at 10 checkpoints", t0)


def criterion_5() -> CriterionResult:
    """Pair statistic: tree route, cascade route and atom mean all hit q_RS."""
    from .stats import rs_fixed_point, two_spin

    t0 = time.time()
    mix = MixtureSpec(terms=[(2, 0.5)])
    q_rs = rs_fixed_point(mix, 0.3)
    meas = ParisiMeasure(atoms=[(q_rs, 1.0)], h=0.3)
    sol = solve_pde(mix, meas)
    a, b, c = two_spin(sol, n_outer=4000, n_paths=16, rng_seed=501)
    tol_mc = max(3.0 * b.std_error, 1e-2)
    checks = [
        abs(a.value - b.value) <= tol_mc,
        abs(a.value - c.value) <= 1e-2,
        abs(b.value - c.value) <= tol_mc,
        abs(a.value - q_rs) <= 1e-2,
        abs(b.value - q_rs) <= tol_mc,
        abs(c.value - q_rs) <= 1e-12,
    ]
    return _result(
        5, "pair statistic triple agreement", all(checks),
        f"pde={a.value:.5f} mc={b.value:.5f}+-{b.std_error:.5f} atoms={c.value:.5f} "
        f"q_RS={q_rs:.5f}", t0)


def criterion_6() -> CriterionResult:
    """Three-replica statistic: closed form vs direct cascade Monte Carlo."""
    from .stats import rs_fixed_point, three_spin

    t0 = time.time()
    mix = MixtureSpec(terms=[(2, 0.5)])
    q_rs = rs_fixed_point(mix, 0.3)
    details = []
    ok = True
    for atoms, k, seed in (
        ([(q_rs, 1.0)], 200, 601),
        ([(0.2, 0.5), (0.5, 0.5)], 400, 602),
    ):
        meas = ParisiMeasure(atoms=atoms, h=0.3)
        sol = solve_pde(mix, meas)
        a, b = three_spin(sol, K=k, n_outer=4000, n_paths=16, rng_seed=seed)
        z = abs(a.value - b.value) / b.std_error
        ok = ok and z <= 3.0
        details.append(f"r={len(atoms)}: closed={a.value:.5f} mc={b.value:.5f} |z|={z:.2f}")
    return _result(6, "triple statistic closed form vs MC", ok, "; ".join(details), t0)


def criterion_7() -> CriterionResult:
    """Replica identities on sampled overlap arrays at two atoms, 1e5 draws."""
    from .ultrametric import gg_check

    t0 = time.time()
    rep = gg_check(SK2["measure"], n_samples=100_000, K=200, rng_seed=701)
    ok = rep.passed
    details = (
        f"identity |z|={abs(rep.ggi.z):.2f}, pair |z|={abs(rep.pair_reduction.z):.2f}, "
        f"triple |z|={abs(rep.triple_reduction.z):.2f}; mass test lhs={rep.pair_mass_lhs:.4f} "
        f"half-coeff rhs={rep.pair_mass_half:.4f} (unit coeff would give {rep.pair_mass_unit})"
    )
    return _result(7, "replica identities on sampled arrays", ok, details, t0)


def criterion_8() -> CriterionResult:
    """Tilted leaf field matches the local field at q_*: moments 1-4, r in {1,2}."""
    from .diffusion import ensemble_paths
    from .tilted import build_tilt_tables, sample_tilted_path_fields

    t0 = time.time()
    ok = True
    details = []
    n = 150_000
    for atoms, seed in (([(0.5, 1.0)], 801), ([(0.3, 0.5), (0.7, 0.5)], 802)):
        mix = MixtureSpec(terms=[(2, 1.0)])
        meas = ParisiMeasure(atoms=atoms, h=0.3)
        sol = solve_pde(mix, meas)
        levels = cole_hopf_levels(mix, meas)
        tables = build_tilt_tables(levels)
        tf = sample_tilted_path_fields(tables, n, rng_seed=seed)
        sde = ensemble_paths(sol, np.array([[meas.q_star]]), n, [meas.q_star],
                             rng_seed=seed + 1000, t_end=meas.q_star).X[0, 0]
        worst = 0.0
        for k in (1, 2, 3, 4):
            a, b = tf**k, sde**k
            se = np.hypot(a.std(ddof=1), b.std(ddof=1)) / np.sqrt(n)
            worst = max(worst, abs(a.mean() - b.mean()) / se)
        ok = ok and worst <= 3.0
        details.append(f"r={len(atoms)}: worst moment |z|={worst:.2f}")
    return _result(8, "tilted law equivalence", ok, "; ".join(details), t0)


def criterion_9() -> CriterionResult:
    """Weight tilting identity at one atom, one site."""
    from .tilted import tilting_identity_check

    t0 = time.time()
    mix = MixtureSpec(terms=[(2, 1.0)])
    meas = ParisiMeasure(atoms=[(0.5, 1.0)], h=0.3)
    rep = tilting_identity_check(mix, meas, n_sites=1, n_samples=4000, K=200, rng_seed=901)
    return _result(9, "weight tilting identity", rep.passed,
                   f"lhs={rep.lhs:.5f} rhs={rep.rhs:.5f} |z|={abs(rep.z):.2f}", t0)


def criterion_10() -> CriterionResult:
    """Cluster fixed-point identity at q in {0, first atom, q_*}, 50 clusters."""
    from .tap import aggregate_residual, tap_check

    t0 = time.time()
    sol = solve_pde(SK2["mixture"], SK2["measure"])
    ok = True
    details = []
    for q, seed in ((0.0, 1001), (0.3, 1002), (0.7, 1003)):
        reports = tap_check(sol, q, n_clusters=50, n_branches=2000, rng_seed=seed)
        agg, agg_se = aggregate_residual(reports)
        worst = max(abs(r.residual) / r.residual_se for r in reports)
        ok = ok and abs(agg) <= 3.0 * agg_se and worst <= 4.5
        details.append(f"q={q}: mean residual z={abs(agg) / agg_se:.2f}, worst cluster z={worst:.2f}")
    return _result(10, "multiscale fixed-point residual", ok, "; ".join(details), t0)


def criterion_11() -> CriterionResult:
    """Energy covariance N xi(R12) at N=32 plus the cavity decomposition bounds."""
    from .finiten import decomposition_check

    t0 = time.time()
    mix = MixtureSpec(terms=[(2, 0.6), (3, 0.5)])
    N = 32
    rng = np.random.default_rng(1101)
    s1 = np.where(rng.random(N) < 0.5, -1.0, 1.0)
    flip = rng.permutation(N)[: N // 4]
    s2 = s1.copy()
    s2[flip] = -s2[flip]
    r12 = float(s1 @ s2) / N
    n_redraws = 10_000
    h1 = np.empty(n_redraws)
    h2 = np.empty(n_redraws)
    o2 = np.outer(s1, s1).ravel(), np.outer(s2, s2).ravel()
    o3 = (np.einsum("i,j,k->ijk", s1, s1, s1).ravel(),
          np.einsum("i,j,k->ijk", s2, s2, s2).ravel())
    c2, c3 = 0.6 * N ** -0.5, 0.5 / N
    batch = 200
    for lo in range(0, n_redraws, batch):
        b = min(batch, n_redraws - lo)
        g2 = rng.standard_normal((b, N * N))
        g3 = rng.standard_normal((b, N * N * N))
        h1[lo : lo + b] = c2 * (g2 @ o2[0]) + c3 * (g3 @ o3[0])
        h2[lo : lo + b] = c2 * (g2 @ o2[1]) + c3 * (g3 @ o3[1])
    prods = h1 * h2
    cov = float(prods.mean() - h1.mean() * h2.mean())
    target = N * float(mix.xi(r12))
    se = float(prods.std(ddof=1) / np.sqrt(n_redraws))
    z_cov = abs(cov - target) / se
    dec = decomposition_check(32, MixtureSpec(terms=[(3, 0.5)]), n_redraws=10_000,
                              rng_seed=1102)
    z_y = abs(dec["cov_y"] - dec["cov_y_theory"]) / dec["cov_y_se"]
    z_r = abs(dec["var_flip_diff"] - dec["var_flip_diff_theory"]) / dec["var_flip_diff_se"]
    ok = z_cov <= 3.0 and z_y <= 3.0 and z_r <= 3.0
    details = (f"cov |z|={z_cov:.2f} (N xi(R)={target:.3f}); cavity-field cov |z|={z_y:.2f}; "
               f"flip-diff var |z|={z_r:.2f}; exp moment={dec['exp_moment_flip_diff']:.4f}")
    return _result(11, "finite-N covariance and decomposition", ok, details, t0)


def criterion_12() -> CriterionResult:
    """Sampled mean overlap vs the fixed-point value at N=128, tolerance 0.05."""
    from .finiten import disorder_average_overlap
    from .stats import rs_fixed_point

    t0 = time.time()
    mix = MixtureSpec(terms=[(2, 0.5)])
    q_rs = rs_fixed_point(mix, 0.3)
    res = disorder_average_overlap(128, mix, 0.3, n_realizations=8, sweeps=4000,
                                   rng_seed=1201)
    diff = abs(res["mean_overlap"] - q_rs)
    return _result(12, "finite-N vs asymptotic overlap", diff <= 0.05,
                   f"E<R12>={res['mean_overlap']:.4f} q_RS={q_rs:.4f} |diff|={diff:.4f} "
                   f"(tol 0.05, warn={res['convergence_warning']})", t0)


DETERMINISM_CONFIG = """\
seed = 2024

[model]
mixture = [[2, 1.0]]
zeta = [[0.3, 0.5], [0.7, 0.5]]
h = 0.3

[grid]
nx = 801
dt_max = 2e-4
store_dt = 2e-3

[simulate]
steps = 1000
n_paths = 500
checkpoints = [0.5, 1.0]
overlap = [[0.7, 0.3], [0.3, 0.7]]
bracket_pairs = [[1, 2]]
dump_bundles = 1

[two-spin]
n_outer = 300
n_paths = 2
steps = 1000
K = 60

[three-spin]
n_outer = 300
n_paths = 2
steps = 1000
K = 60

[moment]
replicas = 2
sets = [[1], [1]]
n_sites = 1
n_outer = 200
n_paths = 2
steps = 1000
K = 60

[gg-check]
n_samples = 2000
K = 60

[tilt-check]
n_samples = 50
moment_samples = 2000
K = 60
steps = 1000

[tap-check]
q = 0.3
n_clusters = 3
n_branches = 1000
steps = 1000

[finite-n]
N = 24
n_realizations = 2
sweeps = 400
"""


def criterion_13() -> CriterionResult:
    """Byte-identical reports when every subcommand re-runs with the same seed."""
    from .cli import main as cli_main

    t0 = time.time()
    subs = [s for s in (
        "solve-pde", "simulate", "two-spin", "three-spin", "moment",
        "gg-check", "tilt-check", "tap-check", "finite-n",
    )]
    mismatches = []
    with tempfile.TemporaryDirectory() as td:
        base = Path(td)
        cfg_path = base / "config.toml"
        cfg_path.write_text(DETERMINISM_CONFIG)
        for sub in subs:
            outs = []
            for run in (1, 2):
                rd = base / f"{sub}-{run}"
                rd.mkdir()
                code = cli_main([sub, "--config", str(cfg_path), "--out",
                                 str(rd / "report.json")])
                if code != 0:
                    mismatches.append(f"{sub} exited {code}")
                outs.append(rd)
            if mismatches:
                continue
            files1 = sorted(p.name for p in outs[0].iterdir())
            files2 = sorted(p.name for p in outs[1].iterdir())
            if files1 != files2:
                mismatches.append(f"{sub}: different file sets")
                continue
            for name in files1:
                if not filecmp.cmp(outs[0] / name, outs[1] / name, shallow=False):
                    mismatches.append(f"{sub}/{name}")
    ok = not mismatches
    details = "all reports byte-identical across re-runs" if ok else "; ".join(mismatches)
    return _result(13, "determinism of reports", ok, details, t0)


CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
    11: criterion_11,
    12: criterion_12,
    13: criterion_13,
}


def run_all(selected=None):
    """Run the selected criteria (all by default) and return their results."""
    numbers = sorted(CRITERIA) if not selected else [int(n) for n in selected]
    results = []
    for n in numbers:
        if n not in CRITERIA:
            raise ValueError(f"unknown criterion {n}")
        results.append(CRITERIA[n]())
    return results
