"""Config-driven experiment runner.

One task per invocation; every run writes a manifest echoing the resolved
config plus sha256 checksums of all artifacts, so identical configs produce
byte-identical outputs.  Exit codes: 0 success, 2 solver divergence,
3 config error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, minimize_scalar

from .config import ExperimentConfig, TASKS, load_config
from .effective import (ClosureResult, HbarTable, build_hbar_table,
                        closure_csv, convexify_table, estimate_mbar,
                        hbar_table_csv, homogenization_closure,
                        isotropic_table, profile_csv, property_suite)
from .env import (BumpProfile, make_environment, sample_cluster_cloud,
                  sample_poisson_cloud, write_cloud)
from .errors import ConfigError, HjhgError, ParameterError, SolverDivergence
from .hamiltonian import HamiltonianSpec
from .numerics import Grid, ScalarField, field_to_dat, write_field
from .solvers import feynman_kac_metric, solve_delta, solve_metric

_EXPR_NS = {"sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp,
            "sqrt": np.sqrt, "abs": np.abs, "pi": np.pi, "minimum": np.minimum,
            "maximum": np.maximum}


def eval_potential_expression(expr: str, **coords) -> np.ndarray:
    try:
        val = eval(expr, {"__builtins__": {}}, {**_EXPR_NS, **coords})
    except Exception as exc:
        raise ParameterError(f"cannot evaluate potential expression {expr!r}: {exc}")
    arr = np.asarray(val, dtype=float)
    ref = next(iter(coords.values()))
    arr = np.broadcast_to(arr, np.shape(ref)).copy()
    if not np.isfinite(arr).all():
        raise ParameterError(f"potential expression {expr!r} is not finite")
    if arr.min() < 0:
        raise ParameterError(f"potential expression {expr!r} must be nonnegative")
    return arr


# ---------------------------------------------------------------------------
# Environment/spec assembly shared by the tasks
# ---------------------------------------------------------------------------

def build_grid(cfg: ExperimentConfig) -> Grid:
    L = cfg.environment["L"]
    n = cfg.grid["n"]
    return Grid(dim=cfg.environment["d"], n=n, h=L / n, boundary="periodic")


def build_environment(cfg: ExperimentConfig, seed: int, grid: Grid):
    env = cfg.environment
    profile = BumpProfile(env["bump_radius"], env["bump_shape"])
    kind = env["kind"]
    if kind == "poisson":
        cloud = sample_poisson_cloud(env["nu"], env["L"], env["d"], seed)
        return make_environment(cloud, profile, grid)
    if kind == "cluster":
        cloud = sample_cluster_cloud(env["center_nu"], env["offspring_mean"],
                                     env["offspring_spread"], env["L"],
                                     env["d"], seed)
        return make_environment(cloud, profile, grid)
    if kind == "zero":
        cloud = sample_poisson_cloud(0.0, env["L"], env["d"], seed)
        return make_environment(cloud, profile, grid)
    # deterministic expression potential (seed-independent)
    ax = grid.axis_coords()
    if grid.dim == 1:
        vals = eval_potential_expression(env["expression"], y=ax)
    else:
        xx, yy = np.meshgrid(ax, ax, indexing="ij")
        vals = eval_potential_expression(env["expression"], x=xx, y=yy)
    cloud = sample_poisson_cloud(0.0, env["L"], env["d"], seed)
    e = make_environment(cloud, profile, grid)
    e.potential = ScalarField(grid, vals)
    return e


def build_spec(cfg: ExperimentConfig, potential: ScalarField) -> HamiltonianSpec:
    ham = cfg.hamiltonian
    return HamiltonianSpec(ham["form"], ham["gamma"], ham["c0"], ham["C0"],
                           potential, ham["sigma2"])


def seed_specs(cfg: ExperimentConfig, grid: Grid, seed_offset=0):
    seeds = [s + seed_offset for s in cfg.environment["seeds"]]
    envs = [build_environment(cfg, s, grid) for s in seeds]
    specs = [build_spec(cfg, e.potential) for e in envs]
    return seeds, envs, specs


# ---------------------------------------------------------------------------
# 1-d periodic cell-problem oracle
# ---------------------------------------------------------------------------

def oracle_1d(gamma: float, c0: float, expression: str, p_list):
    """Independent effective Hamiltonian for 1-d periodic potentials, A = 0.

    Hbar(p) = -min V on the flat region |p| <= p*, otherwise the mu solving
    |p| = integral_0^1 ((mu + V(y))/c0)^(1/gamma) dy; p* is that integral at
    mu = -min V.  Adaptive quadrature plus bisection to 1e-8.
    """
    if not (gamma > 1 and c0 > 0):
        raise ParameterError("need gamma > 1 and c0 > 0")

    def V(y):
        return eval_potential_expression(expression, y=np.asarray(y, dtype=float))

    ys = np.linspace(0.0, 1.0, 4097)
    vmin_coarse = float(V(ys).min())
    y0 = float(ys[int(V(ys).argmin())])
    res = minimize_scalar(lambda y: float(V(np.array([y]))[0]),
                          bounds=(max(0.0, y0 - 5e-4), min(1.0, y0 + 5e-4)),
                          method="bounded")
    vmin = min(vmin_coarse, float(res.fun))

    def momentum(mu):
        f = lambda y: ((mu + float(V(np.array([y]))[0])) / c0) ** (1.0 / gamma)
        val, _ = quad(f, 0.0, 1.0, limit=200)
        return val

    p_star = momentum(-vmin + 1e-14)
    out = []
    for p in p_list:
        ap = abs(float(p))
        if ap <= p_star:
            out.append(-vmin)
            continue
        hi = max(1.0, -vmin + 1.0)
        while momentum(hi) < ap:
            hi = 2 * hi + 1.0
        mu = brentq(lambda m: momentum(m) - ap, -vmin + 1e-14, hi, xtol=1e-10)
        out.append(float(mu))
    return np.asarray(out)


# ---------------------------------------------------------------------------
# Task runners
# ---------------------------------------------------------------------------

def _emit_plot_script(outdir: Path, dats):
    lines = ["set grid", "set key outside"]
    for d in dats:
        lines.append(f'plot "{d}" using 1:2 with lines title "{d}"')
    (outdir / "plot.gp").write_text("\n".join(lines) + "\n")
    return ["plot.gp"]


def _write_manifest(outdir: Path, cfg: ExperimentConfig, artifacts):
    entries = []
    for name in sorted(artifacts):
        blob = (outdir / name).read_bytes()
        entries.append({"name": name, "bytes": len(blob),
                        "sha256": hashlib.sha256(blob).hexdigest()})
    manifest = {"config": dict(sorted(cfg.resolved.items())), "artifacts": entries}
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                     sort_keys=True) + "\n")


def _task_sample_env(cfg, outdir, threads, seed_offset):
    grid = build_grid(cfg)
    seeds, envs, _ = seed_specs(cfg, grid, seed_offset)
    artifacts = []
    for s, e in zip(seeds, envs):
        cname = f"cloud_seed{s}.txt"
        fname = f"potential_seed{s}.bin"
        dname = f"potential_seed{s}.dat"
        write_cloud(e.cloud, outdir / cname)
        write_field(e.potential, outdir / fname)
        field_to_dat(e.potential, outdir / dname)
        artifacts += [cname, fname, dname]
    artifacts += _emit_plot_script(outdir, [a for a in artifacts if a.endswith(".dat")])
    return artifacts


def _task_solve_delta(cfg, outdir, threads, seed_offset):
    grid = build_grid(cfg)
    seeds, _, specs = seed_specs(cfg, grid, seed_offset)
    t = cfg.task
    artifacts = []
    rows = ["seed,delta,estimate,residual,iterations"]
    for s, spec in zip(seeds, specs):
        res = solve_delta(spec, np.array(t["p"]), t["delta"], tol=t["tol"],
                          max_iters=t["max_iters"])
        fname = f"vdelta_seed{s}.bin"
        write_field(res.v, outdir / fname)
        hname = f"residuals_seed{s}.csv"
        with open(outdir / hname, "w") as fh:
            fh.write("iteration,residual\n")
            for it, r in res.residual_history:
                fh.write(f"{int(it)},{r:.12g}\n")
        rows.append(f"{s},{t['delta']:.12g},{res.hbar_estimate:.12g},"
                    f"{res.residual:.12g},{res.iterations}")
        artifacts += [fname, hname]
    (outdir / "delta_summary.csv").write_text("\n".join(rows) + "\n")
    artifacts.append("delta_summary.csv")
    return artifacts


def _task_solve_metric(cfg, outdir, threads, seed_offset):
    grid = build_grid(cfg)
    seeds, _, specs = seed_specs(cfg, grid, seed_offset)
    t = cfg.task
    artifacts = []
    rows = ["seed,feasible,min_slope,max_slope,sweeps,max_update"]
    for s, spec in zip(seeds, specs):
        sol = solve_metric(spec, np.array(t["p"]), t["mu"], tol=t["tol"],
                           source_radius=t["source_radius"], omega=t["omega"],
                           max_rounds=t["max_rounds"])
        fname = f"metric_seed{s}.bin"
        write_field(sol.m, outdir / fname)
        slopes = sol.asymptotic_slopes.values()
        rows.append(f"{s},{int(sol.feasible)},{min(slopes):.12g},"
                    f"{max(slopes):.12g},{sol.sweeps},{sol.max_update:.12g}")
        artifacts.append(fname)
    (outdir / "metric_summary.csv").write_text("\n".join(rows) + "\n")
    artifacts.append("metric_summary.csv")
    return artifacts


def _task_estimate_hbar(cfg, outdir, threads, seed_offset):
    grid = build_grid(cfg)
    _, _, specs = seed_specs(cfg, grid, seed_offset)
    t = cfg.task
    table = build_hbar_table(specs, t["p_list"], t["deltas"], tol=t["tol"],
                             threads=threads)
    hbar_table_csv(table, outdir / "hbar.csv")
    rows = ["p,delta,seed_index,statistic"]
    for p, est in zip(t["p_list"], table.details):
        ptag = ":".join(f"{x:.12g}" for x in p)
        for d in sorted(est.per_delta):
            for i, stat in enumerate(est.per_delta[d]):
                rows.append(f"{ptag},{d:.12g},{i},{stat:.12g}")
    (outdir / "hbar_raw.csv").write_text("\n".join(rows) + "\n")
    return ["hbar.csv", "hbar_raw.csv"]


def _task_profile_mbar(cfg, outdir, threads, seed_offset):
    grid = build_grid(cfg)
    _, _, specs = seed_specs(cfg, grid, seed_offset)
    t = cfg.task
    profiles = [estimate_mbar(specs, np.array(t["p"]), mu,
                              t_schedule=t["t_schedule"], threads=threads)
                for mu in t["mu_list"]]
    profile_csv(profiles, outdir / "profile.csv")
    return ["profile.csv"]


def _task_closure(cfg, outdir, threads, seed_offset):
    grid = build_grid(cfg)
    _, envs, specs = seed_specs(cfg, grid, seed_offset)
    t = cfg.task
    ray = build_hbar_table(specs, t["p_list"], t["deltas"], tol=t["tol"],
                           threads=threads)
    table = convexify_table(isotropic_table(ray, n_theta=t["n_theta"]))
    xg = Grid(dim=cfg.environment["d"], n=t["x_n"], h=t["x_L"] / t["x_n"])
    center = (xg.n // 2,) * xg.dim
    ax = xg.axis_coords()
    if xg.dim == 1:
        dist = np.abs(ax - center[0] * xg.h)
    else:
        xx, yy = np.meshgrid(ax, ax, indexing="ij")
        dist = np.sqrt((xx - center[0] * xg.h) ** 2 + (yy - center[1] * xg.h) ** 2)
    u0 = ScalarField(xg, np.minimum(dist, 1.0))
    base = build_spec(cfg, envs[0].potential)
    result = homogenization_closure(envs[0], base, u0, t["epsilons"], t["T"],
                                    hbar_table=table,
                                    window_radius=t["window_radius"],
                                    threads=threads)
    closure_csv(result, outdir / "closure.csv")
    hbar_table_csv(ray, outdir / "hbar_ray.csv")
    return ["closure.csv", "hbar_ray.csv"]


def _task_feynman_kac(cfg, outdir, threads, seed_offset):
    grid = build_grid(cfg)
    _, _, specs = seed_specs(cfg, grid, seed_offset)
    t = cfg.task
    d = cfg.environment["d"]
    rows = [",".join([f"y_{i + 1}" for i in range(d)]
                     + ["estimate", "ci_halfwidth", "hits", "n_paths"])]
    for probe in t["probes"]:
        est = feynman_kac_metric(specs[0], t["mu"], probe,
                                 n_paths=t["n_paths"], dt=t["dt"],
                                 seed=t["fk_seed"], max_steps=t["max_steps"],
                                 source_radius=t["source_radius"])
        rows.append(",".join([f"{x:.12g}" for x in probe]
                             + [f"{est.value:.12g}", f"{est.ci_halfwidth:.12g}",
                                str(est.hits), str(est.n_paths)]))
    (outdir / "feynman_kac.csv").write_text("\n".join(rows) + "\n")
    return ["feynman_kac.csv"]


def read_hbar_csv(path) -> HbarTable:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        d = sum(1 for c in header if c.startswith("p_"))
        ps, es, sp, route, seeds = [], [], [], "delta", 0
        for line in fh:
            cells = line.strip().split(",")
            if len(cells) < d + 4:
                continue
            ps.append([float(c) for c in cells[:d]])
            es.append(float(cells[d]))
            sp.append(float(cells[d + 1]))
            route = cells[d + 2]
            seeds = int(cells[d + 3])
    return HbarTable(np.array(ps), np.array(es), np.array(sp), route,
                     n_seeds=seeds)


def _task_property_suite(cfg, outdir, threads, seed_offset):
    t = cfg.task
    table = read_hbar_csv(t["table"])
    spec = build_spec(cfg, None)
    report = property_suite(table, spec, flat_tol=t["flat_tol"])
    (outdir / "property_report.txt").write_text(report.summary() + "\n")
    return ["property_report.txt"]


def _task_oracle_1d(cfg, outdir, threads, seed_offset):
    t = cfg.task
    ham = cfg.hamiltonian
    vals = oracle_1d(ham["gamma"], ham["c0"], t["expression"], t["p_list"])
    rows = ["p,hbar"]
    for p, v in zip(t["p_list"], vals):
        rows.append(f"{p:.12g},{v:.12g}")
    (outdir / "oracle.csv").write_text("\n".join(rows) + "\n")
    return ["oracle.csv"]


_RUNNERS = {
    "sample-env": _task_sample_env,
    "solve-delta": _task_solve_delta,
    "solve-metric": _task_solve_metric,
    "estimate-hbar": _task_estimate_hbar,
    "profile-mbar": _task_profile_mbar,
    "closure": _task_closure,
    "feynman-kac": _task_feynman_kac,
    "property-suite": _task_property_suite,
    "oracle-1d": _task_oracle_1d,
}


def run(config_path, *, out_override=None, threads=1, seed_offset=0,
        expect_task=None) -> int:
    try:
        cfg = load_config(config_path)
        if expect_task is not None and cfg.task_name != expect_task:
            raise ConfigError(f"config task '{cfg.task_name}' does not match "
                              f"subcommand '{expect_task}'")
        outdir = Path(out_override or cfg.output["dir"])
        outdir.mkdir(parents=True, exist_ok=True)
    except (ConfigError, ParameterError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    try:
        artifacts = _RUNNERS[cfg.task_name](cfg, outdir, threads, seed_offset)
        _write_manifest(outdir, cfg, artifacts)
    except SolverDivergence as exc:
        print(f"solver divergence: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hjhomog",
                                     description="effective-Hamiltonian lab")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in TASKS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--seed-offset", type=int, default=0)
    args = parser.parse_args(argv)
    return run(args.config, out_override=args.out, threads=args.threads,
               seed_offset=args.seed_offset, expect_task=args.command)


if __name__ == "__main__":
    sys.exit(main())
