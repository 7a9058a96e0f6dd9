"""Command-line orchestration: config parsing, subcommands, reports.

Reports are JSON with the resolved config and package version embedded; bulk
data goes to CSV files next to the report.  Given the same config and seed,
re-runs produce byte-identical outputs: every random stream derives from the
single seed through SeedSequence spawning, and no timestamps are written.

Exit codes: 0 ok, 1 config error, 2 numerical failure, 3 acceptance failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .errors import ConfigError, NumericalFailure, SpinLabError
from .mixture import MixtureSpec, ParisiMeasure
from .parisi import PdeGrid, cole_hopf_levels, solve_pde

SUBCOMMANDS = (
    "solve-pde",
    "simulate",
    "two-spin",
    "three-spin",
    "moment",
    "gg-check",
    "tilt-check",
    "tap-check",
    "finite-n",
    "selftest",
)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path: Path, payload: dict):
    text = json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n"
    path.write_text(text)


def write_csv(path: Path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {p}: {exc}") from None


def model_from_config(cfg: dict):
    model = cfg.get("model")
    if not model:
        raise ConfigError("config needs a [model] table with mixture, zeta, h")
    try:
        mixture = MixtureSpec(terms=[(int(p), float(b)) for p, b in model["mixture"]])
        measure = ParisiMeasure(
            atoms=[(float(q), float(m)) for q, m in model["zeta"]], h=float(model.get("h", 0.0))
        )
    except KeyError as exc:
        raise ConfigError(f"[model] missing key {exc}") from None
    return mixture, measure


def grid_from_config(cfg: dict, mixture, measure) -> PdeGrid:
    g = cfg.get("grid", {})
    return PdeGrid.for_model(
        mixture,
        measure,
        nx=int(g.get("nx", 1601)),
        dt_max=g.get("dt_max"),
        store_dt=float(g.get("store_dt", 1e-3)),
        x_halfwidth=g.get("x_halfwidth"),
    )


def _solution(cfg, mixture, measure):
    return solve_pde(mixture, measure, grid_from_config(cfg, mixture, measure))


# ---------------------------------------------------------------------------
# subcommand implementations (each returns a results dict and may write CSVs)


def cmd_solve_pde(cfg, seed, out: Path):
    mixture, measure = model_from_config(cfg)
    sol = _solution(cfg, mixture, measure)
    opts = cfg.get("solve-pde", {})
    fmt = opts.get("format", "binary")
    dump = out.with_suffix(".bin" if fmt == "binary" else ".csv")
    if fmt == "binary":
        header = json.dumps(
            {
                "arrays": ["ts", "xs", "u", "ux"],
                "shapes": [list(sol.ts.shape), list(sol.xs.shape), list(sol.u.shape), list(sol.ux.shape)],
                "dtype": "float64",
            },
            sort_keys=True,
        )
        with open(dump, "wb") as fh:
            fh.write(b"SPINLAB-PDE-1\n")
            fh.write(header.encode() + b"\n")
            for arr in (sol.ts, sol.xs, sol.u, sol.ux):
                fh.write(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    elif fmt == "csv":
        rows = []
        for i, t in enumerate(sol.ts):
            for j, x in enumerate(sol.xs):
                rows.append((float(t), float(x), float(sol.u[i, j]), float(sol.ux[i, j])))
        write_csv(dump, ("t", "x", "u", "ux"), rows)
    else:
        raise ConfigError(f"unknown dump format {fmt!r}")
    tanh_err = float(
        np.abs(sol.ux[sol.ts >= measure.q_star - 1e-12] - np.tanh(sol.xs)[None, :]).max()
    )
    return {
        "n_times_stored": len(sol.ts),
        "nx": len(sol.xs),
        "plateau_max_err": tanh_err,
        "dump_file": dump.name,
        "format": fmt,
    }


def cmd_simulate(cfg, seed, out: Path):
    from .diffusion import ensemble_paths, simulate_bundle

    mixture, measure = model_from_config(cfg)
    sol = _solution(cfg, mixture, measure)
    opts = cfg.get("simulate", {})
    Q = np.asarray(opts.get("overlap", [[measure.q_star]]), dtype=float)
    steps = int(opts.get("steps", 4000))
    n_paths = int(opts.get("n_paths", 20_000))
    cps = opts.get("checkpoints", 10)
    if isinstance(cps, int):
        cps = np.linspace(0.0, 1.0, cps + 1)[1:].tolist()
    pairs = [tuple(int(i) - 1 for i in p) for p in opts.get("bracket_pairs", [])]
    res = ensemble_paths(
        sol, Q, n_paths, cps, rng_seed=seed, steps=steps, bracket_pairs=pairs,
        record_magnetization=True,
    )
    rows = []
    for icp, t in enumerate(res.checkpoints):
        for rep in range(Q.shape[0]):
            x = res.X[icp, rep]
            m = res.M[icp, rep]
            rows.append(
                (
                    float(t),
                    rep + 1,
                    float(x.mean()),
                    float(x.var(ddof=1)),
                    float(m.mean()),
                    float(m.std(ddof=1) / np.sqrt(n_paths)),
                )
            )
    write_csv(out.with_suffix(".csv"), ("t", "replica", "mean_X", "var_X", "mean_M", "se_M"), rows)
    results = {"n_paths": n_paths, "checkpoints": [float(t) for t in res.checkpoints],
               "stats_file": out.with_suffix(".csv").name}
    if pairs:
        brows = []
        for (i, j), table in res.brackets.items():
            for icp, t in enumerate(res.checkpoints):
                brows.append(
                    (float(t), i + 1, j + 1, float(table[icp].mean()),
                     float(table[icp].std(ddof=1) / np.sqrt(n_paths)))
                )
        bfile = out.with_name(out.stem + "-brackets.csv")
        write_csv(bfile, ("t", "replica_i", "replica_j", "mean_bracket", "se"), brows)
        results["brackets_file"] = bfile.name
    n_dump = int(opts.get("dump_bundles", 0))
    if n_dump > 0:
        drows = []
        seeds = np.random.SeedSequence(seed).spawn(n_dump)
        for b_idx, bseed in enumerate(seeds):
            bundle = simulate_bundle(sol, Q, steps=steps, rng_seed=bseed)
            for rep in range(bundle.d):
                for k, t in enumerate(bundle.ts):
                    drows.append(
                        (b_idx, rep + 1, float(t), float(bundle.B[rep, k]),
                         float(bundle.Y[rep, k]), float(bundle.X[rep, k]),
                         float(bundle.M[rep, k]))
                    )
        dfile = out.with_name(out.stem + "-paths.csv")
        write_csv(dfile, ("bundle", "replica", "t", "B", "Y", "X", "M"), drows)
        results["paths_file"] = dfile.name
    return results


def _stat_json(res):
    return {
        "value": res.value,
        "se": res.std_error,
        "method": res.method,
        "diagnostics": res.diagnostics,
    }


def cmd_two_spin(cfg, seed, out: Path):
    from .stats import two_spin

    mixture, measure = model_from_config(cfg)
    sol = _solution(cfg, mixture, measure)
    opts = cfg.get("two-spin", {})
    a, b, c = two_spin(
        sol,
        K=int(opts.get("K", 200)),
        n_outer=int(opts.get("n_outer", 4000)),
        n_paths=int(opts.get("n_paths", 8)),
        rng_seed=seed,
        steps=int(opts.get("steps", 2000)),
    )
    return {"pde_tree": _stat_json(a), "cascade_mc": _stat_json(b), "closed_form": _stat_json(c)}


def cmd_three_spin(cfg, seed, out: Path):
    from .stats import three_spin

    mixture, measure = model_from_config(cfg)
    sol = _solution(cfg, mixture, measure)
    opts = cfg.get("three-spin", {})
    a, b = three_spin(
        sol,
        K=int(opts.get("K", 200)),
        n_outer=int(opts.get("n_outer", 4000)),
        n_paths=int(opts.get("n_paths", 8)),
        rng_seed=seed,
        steps=int(opts.get("steps", 2000)),
    )
    return {"closed_form": _stat_json(a), "cascade_mc": _stat_json(b)}


def cmd_moment(cfg, seed, out: Path):
    from .stats import MomentQuery, moment_mc

    mixture, measure = model_from_config(cfg)
    sol = _solution(cfg, mixture, measure)
    opts = cfg.get("moment", {})
    try:
        query = MomentQuery(
            q_replicas=int(opts["replicas"]),
            sets=tuple(tuple(c) for c in opts["sets"]),
            n_sites=int(opts["n_sites"]),
        )
    except KeyError as exc:
        raise ConfigError(f"[moment] missing key {exc}") from None
    res = moment_mc(
        sol,
        query,
        K=int(opts.get("K", 200)),
        n_outer=int(opts.get("n_outer", 4000)),
        n_paths=int(opts.get("n_paths", 8)),
        rng_seed=seed,
        steps=int(opts.get("steps", 2000)),
    )
    return _stat_json(res)


def cmd_gg_check(cfg, seed, out: Path):
    from .ultrametric import gg_check

    _, measure = model_from_config(cfg)
    opts = cfg.get("gg-check", {})
    rep = gg_check(
        measure,
        f_expr=opts.get("f"),
        g_expr=opts.get("g"),
        f3_expr=opts.get("f3"),
        n_replicas=int(opts.get("n_replicas", 2)),
        n_samples=int(opts.get("n_samples", 100_000)),
        K=int(opts.get("K", 200)),
        rng_seed=seed,
    )

    def ident(e):
        return None if e is None else {
            "lhs": e.lhs, "rhs": e.rhs, "se": e.se, "z": e.z, "passed": e.passed,
        }

    return {
        "replica_identity": ident(rep.ggi),
        "pair_reduction": ident(rep.pair_reduction),
        "pair_mass_test": {
            "lhs": rep.pair_mass_lhs,
            "rhs_half_coefficient": rep.pair_mass_half,
            "rhs_unit_coefficient": rep.pair_mass_unit,
        },
        "triple_reduction": ident(rep.triple_reduction),
        "notes": rep.notes,
        "passed": rep.passed,
    }


def cmd_tilt_check(cfg, seed, out: Path):
    from .diffusion import ensemble_paths
    from .tilted import build_tilt_tables, sample_tilted_path_fields, tilting_identity_check

    mixture, measure = model_from_config(cfg)
    opts = cfg.get("tilt-check", {})
    seeds = np.random.SeedSequence(seed).spawn(3)
    levels = cole_hopf_levels(mixture, measure)
    rep = tilting_identity_check(
        mixture,
        measure,
        n_sites=int(opts.get("n_sites", 1)),
        n_samples=int(opts.get("n_samples", 2000)),
        K=int(opts.get("K", 200)),
        rng_seed=seeds[0],
        levels=levels,
    )
    n_mom = int(opts.get("moment_samples", 100_000))
    tables = build_tilt_tables(levels)
    tf = sample_tilted_path_fields(tables, n_mom, rng_seed=seeds[1])
    sol = _solution(cfg, mixture, measure)
    sde = ensemble_paths(
        sol, np.array([[measure.q_star]]), n_mom, [measure.q_star],
        rng_seed=seeds[2], t_end=measure.q_star,
        steps=int(opts.get("steps", 4000)),
    ).X[0, 0]
    moments = []
    for k in (1, 2, 3, 4):
        a, b = tf**k, sde**k
        se = float(np.hypot(a.std(ddof=1), b.std(ddof=1)) / np.sqrt(n_mom))
        moments.append(
            {"order": k, "tilted": float(a.mean()), "sde": float(b.mean()), "se": se,
             "z": float((a.mean() - b.mean()) / se), "passed": bool(abs(a.mean() - b.mean()) <= 3 * se)}
        )
    return {
        "weight_tilting": {
            "lhs": rep.lhs, "rhs": rep.rhs, "se": rep.se, "z": rep.z, "passed": rep.passed,
        },
        "law_equivalence_moments": moments,
        "kernel_norm_dev": list(tables.norm_dev),
        "passed": bool(rep.passed and all(m["passed"] for m in moments)),
    }


def cmd_tap_check(cfg, seed, out: Path):
    from .tap import aggregate_residual, tap_check

    mixture, measure = model_from_config(cfg)
    sol = _solution(cfg, mixture, measure)
    opts = cfg.get("tap-check", {})
    qs = opts.get("q", None)
    if qs is None:
        qs = sorted({0.0, float(measure.locations[0]), measure.q_star})
    elif isinstance(qs, (int, float)):
        qs = [float(qs)]
    n_clusters = int(opts.get("n_clusters", 50))
    n_branches = int(opts.get("n_branches", 2000))
    seeds = np.random.SeedSequence(seed).spawn(len(qs))
    rows = []
    summary = []
    for q, qseed in zip(qs, seeds):
        reports = tap_check(sol, float(q), n_clusters=n_clusters, n_branches=n_branches,
                            rng_seed=qseed, steps=int(opts.get("steps", 4000)))
        for c_idx, r in enumerate(reports):
            rows.append(
                (float(q), c_idx, float(r.x_q), float(r.s_mean), float(r.y_mean),
                 float(r.residual), float(r.residual_se))
            )
        agg, agg_se = aggregate_residual(reports)
        summary.append(
            {
                "q": float(q),
                "onsager": reports[0].onsager,
                "mean_residual": agg,
                "se": agg_se,
                "worst_cluster_z": max(abs(r.residual) / r.residual_se for r in reports),
                "passed": bool(abs(agg) <= 3 * agg_se if len(reports) > 1 else reports[0].passed),
            }
        )
    write_csv(
        out.with_suffix(".csv"),
        ("q", "cluster", "x_q", "s_mean", "y_mean", "residual", "residual_se"),
        rows,
    )
    return {"per_scale": summary, "clusters_file": out.with_suffix(".csv").name,
            "passed": bool(all(s["passed"] for s in summary))}


def cmd_finite_n(cfg, seed, out: Path):
    from .finiten import decomposition_check, disorder_average_overlap
    from .stats import rs_fixed_point

    mixture, measure = model_from_config(cfg)
    opts = cfg.get("finite-n", {})
    N = int(opts.get("N", 128))
    res = disorder_average_overlap(
        N,
        mixture,
        measure.h,
        n_realizations=int(opts.get("n_realizations", 8)),
        sweeps=int(opts.get("sweeps", 4000)),
        n_chains=int(opts.get("n_chains", 2)),
        rng_seed=seed,
    )
    # pooled overlap histogram over realizations
    pool_vals = {}
    for g in res["realizations"]:
        for v, c in zip(g.overlap_values, g.overlap_counts):
            pool_vals[float(v)] = pool_vals.get(float(v), 0) + int(c)
    hist_rows = sorted(pool_vals.items())
    write_csv(out.with_suffix(".csv"), ("overlap", "count"), hist_rows)
    results = {
        "N": N,
        "mean_overlap": res["mean_overlap"],
        "se": res["se"],
        "rs_fixed_point": rs_fixed_point(mixture, measure.h),
        "convergence_warning": res["convergence_warning"],
        "site_magnetization": float(np.mean([g.site_magnetization for g in res["realizations"]])),
        "site_pair_moment": float(np.mean([g.site_pair_moment for g in res["realizations"]])),
        "acceptance_rate": float(np.mean([g.acceptance_rate for g in res["realizations"]])),
        "histogram_file": out.with_suffix(".csv").name,
    }
    dec = opts.get("decomposition")
    if dec:
        results["decomposition"] = decomposition_check(
            int(dec.get("N", 32)),
            mixture,
            n_redraws=int(dec.get("n_redraws", 10_000)),
            rng_seed=np.random.SeedSequence(seed).spawn(2)[1],
            overlap=float(dec.get("overlap", 0.5)),
        )
        results["decomposition"].pop("realizations", None)
    return results


def cmd_selftest(cfg, seed, out: Path):
    from .acceptance import run_all

    opts = cfg.get("selftest", {}) if cfg else {}
    criteria = opts.get("criteria")
    results = run_all(criteria)
    for r in results:
        print(r.line())
    payload = [
        {"criterion": r.number, "name": r.name, "passed": r.passed, "details": r.details}
        for r in results
    ]
    if not all(r.passed for r in results):
        return {"criteria": payload, "passed": False}
    return {"criteria": payload, "passed": True}


COMMANDS = {
    "solve-pde": cmd_solve_pde,
    "simulate": cmd_simulate,
    "two-spin": cmd_two_spin,
    "three-spin": cmd_three_spin,
    "moment": cmd_moment,
    "gg-check": cmd_gg_check,
    "tilt-check": cmd_tilt_check,
    "tap-check": cmd_tap_check,
    "finite-n": cmd_finite_n,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spinlab",
        description="Numerical laboratory for spin distributions of mixed p-spin models",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="report path (default <subcommand>-report.json)")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config) if args.config else {}
        if args.subcommand != "selftest" and not cfg:
            raise ConfigError("--config is required for this subcommand")
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        out = Path(args.out or cfg.get("out") or f"{args.subcommand}-report.json")
        results = COMMANDS[args.subcommand](cfg, seed, out)
        payload = {
            "version": __version__,
            "subcommand": args.subcommand,
            "seed": seed,
            "config": cfg,
            "results": results,
        }
        write_json(out, payload)
        if args.subcommand == "selftest" and not results.get("passed", True):
            print(f"FAIL: acceptance criteria failed; report in {out}", file=sys.stderr)
            return 3
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except SpinLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
