"""Command line front end.

Subcommands: solve, dual, moran, verify, asymptotics, ld.  Every output
file records the configuration hash and the library version; reports from
`verify` are byte-identical for a fixed (config, seed) regardless of thread
count or repetition.

Exit codes: 0 success, 1 validation error, 2 numerical failure,
3 verification failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .duals import (
    duality_check,
    mc_solution_estimate,
    _canonical_start,
)
from .measure import ProbabilityMeasure, boxtimes, l1_distance
from .moran import lln_convergence
from .partitions import decode, encode
from .rng import spawn_stream
from .sites import SiteConfig
from .solvers import (
    SolverError,
    SolverSettings,
    Trajectory,
    asymptotic_limit,
    equilibration_time,
    integrate_ode,
    ld_decay_residual,
    marginal_sre_solve,
    recursive_solve,
    selection_flow,
    semigroup_solve,
    yule_pgf,
)
from .duals import ancestor_mixture
from .measure import cond_fit, cond_unfit, fit_fraction

VALIDATION_EXIT = 1
NUMERICAL_EXIT = 2
VERIFICATION_EXIT = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(VALIDATION_EXIT, f"{self.prog}: error: {message}\n")


def _thread_count(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("SELREC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"SELREC_THREADS is not an integer: {env!r}") from exc
    return 1


def _stamp(exp: ExperimentConfig) -> dict:
    return {"config_hash": exp.config_hash, "version": __version__}


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write_trajectory_csv(path: Path, exp: ExperimentConfig, traj: Trajectory) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        fh.write(f"# selrec {__version__} config {exp.config_hash}\n")
        fh.write(f"# sites {','.join(str(a) for a in traj.sites)}\n")
        traj.write_csv(fh)


# -- solve ---------------------------------------------------------------


def _comparison_times(settings: SolverSettings) -> list[float]:
    grid = settings.grid()
    idx = sorted({0, settings.grid_steps // 4, settings.grid_steps // 2,
                  3 * settings.grid_steps // 4, settings.grid_steps})
    return [float(grid[j]) for j in idx]


def cmd_solve(args) -> int:
    exp = ExperimentConfig.from_file(args.config)
    method = args.method or "all"
    if method not in ("ode", "recursion", "semigroup", "all"):
        raise ConfigError(f"unknown method: {method}")
    out = Path(args.out)
    meta: dict = {**_stamp(exp), "method": method,
                  "settings": {
                      "t_max": exp.settings.t_max,
                      "grid_steps": exp.settings.grid_steps,
                      "ode_step": exp.settings.ode_step,
                      "quad_tol": exp.settings.quad_tol,
                  }}
    solved: dict[str, Trajectory] = {}
    runtimes: dict[str, float] = {}
    wanted = ("ode", "recursion", "semigroup") if method == "all" else (method,)
    times = exp.output_times or _comparison_times(exp.settings)
    for name in wanted:
        tic = time.perf_counter()
        if name == "ode":
            traj = integrate_ode(exp.cfg, exp.omega0, exp.settings)
            meta["ode_mass_drift"] = traj.mass_drift
        elif name == "recursion":
            traj = recursive_solve(exp.cfg, exp.omega0, exp.settings).solution
        else:
            vals = [
                semigroup_solve(exp.cfg, exp.omega0, t, exp.settings.quad_tol).values
                for t in times
            ]
            traj = Trajectory(np.asarray(times), exp.cfg.sites, np.vstack(vals))
        runtimes[name] = time.perf_counter() - tic
        solved[name] = traj
        _write_trajectory_csv(out / f"solve_{name}.csv", exp, traj)
    meta["runtimes_seconds"] = runtimes
    if method == "all":
        table = []
        for t in times:
            row = {"t": t}
            vals = {name: solved[name].at_time(t).values for name in wanted}
            for a, b in (("ode", "recursion"), ("ode", "semigroup"),
                         ("recursion", "semigroup")):
                row[f"l1_{a}_{b}"] = float(np.abs(vals[a] - vals[b]).sum())
            table.append(row)
        meta["pairwise_l1"] = table
        meta["max_pairwise_l1"] = max(
            v for row in table for k, v in row.items() if k != "t"
        )
    _write_json(out / "solve_meta.json", meta)
    print(f"solve: wrote {len(wanted)} trajectory file(s) to {out}")
    return 0


# -- dual ------------------------------------------------------------------


def cmd_dual(args) -> int:
    exp = ExperimentConfig.from_file(args.config)
    seed = args.seed if args.seed is not None else exp.seed
    replicates = args.replicates or exp.replicates
    threads = _thread_count(args)
    flavors = (
        ("counts", "partition", "runtimes")
        if exp.dual_flavor == "all"
        else (exp.dual_flavor,)
    )
    t = exp.settings.t_max
    reference = integrate_ode(exp.cfg, exp.omega0, exp.settings).final_probability()
    results = {}
    worst = 0.0
    for flavor in flavors:
        est = mc_solution_estimate(
            exp.cfg, exp.omega0, t, replicates, seed, flavor=flavor, threads=threads
        )
        z = est.z_scores(reference)
        worst = max(worst, float(np.max(np.abs(z))))
        results[flavor] = {
            "estimate": est.mean.to_dict(),
            "stderr": [float(v) for v in est.stderr],
            "z_vs_ode": [float(v) for v in z],
            "max_abs_z": float(np.max(np.abs(z))),
        }
    payload = {
        **_stamp(exp),
        "t": t,
        "replicates": replicates,
        "seed": seed,
        "reference": reference.to_dict(),
        "flavors": results,
        "max_abs_z": worst,
        "z_threshold": exp.z_threshold,
    }
    _write_json(Path(args.out) / "dual_estimates.json", payload)
    print(f"dual: max |z| vs forward solution {worst:.3f} over {flavors}")
    return 0


# -- moran -------------------------------------------------------------------


def cmd_moran(args) -> int:
    exp = ExperimentConfig.from_file(args.config)
    seed = args.seed if args.seed is not None else exp.seed
    replicates = args.replicates or exp.moran_replicates
    report = lln_convergence(
        exp.cfg,
        exp.omega0,
        exp.settings.t_max,
        exp.moran_population_sizes,
        replicates,
        seed,
    )
    payload = {**_stamp(exp), "t": exp.settings.t_max, **report.to_dict()}
    _write_json(Path(args.out) / "moran_lln.json", payload)
    print(
        "moran: mean l1 "
        + ", ".join(
            f"N={N}: {d:.4g}"
            for N, d in zip(report.population_sizes, report.mean_distance)
        )
        + f"; slope {report.slope:.3f}"
    )
    return 0


# -- asymptotics ----------------------------------------------------------------


def cmd_asymptotics(args) -> int:
    exp = ExperimentConfig.from_file(args.config)
    try:
        limit = asymptotic_limit(exp.cfg, exp.omega0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    T = equilibration_time(exp.cfg, exp.omega0, eps=5e-5)
    T = max(T, exp.settings.t_max)
    settings = SolverSettings(
        t_max=T,
        grid_steps=max(exp.settings.grid_steps, 2),
        quad_tol=exp.settings.quad_tol,
    )
    traj = integrate_ode(exp.cfg, exp.omega0, settings)
    dist = np.abs(traj.values - limit.values[None, :]).sum(axis=1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "asymptotics_convergence.csv").open("w") as fh:
        fh.write(f"# selrec {__version__} config {exp.config_hash}\n")
        fh.write("t,l1_to_limit\n")
        for t, d in zip(traj.times, dist):
            fh.write(f"{t!r},{d!r}\n")
    payload = {
        **_stamp(exp),
        "limit": limit.to_dict(),
        "horizon": float(T),
        "final_distance": float(dist[-1]),
    }
    _write_json(out / "asymptotics_limit.json", payload)
    print(f"asymptotics: distance {dist[-1]:.3e} to the product limit at t={T:.3g}")
    return 0


# -- linkage decay ---------------------------------------------------------------


def cmd_ld(args) -> int:
    exp = ExperimentConfig.from_file(args.config)
    family = recursive_solve(exp.cfg, exp.omega0, exp.settings)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    levels = []
    norm_cols = {}
    for level in range(1, len(family.levels)):
        res = ld_decay_residual(family, level)
        norms = res["lhs_norms"]
        norm_cols[level] = norms
        rate = res["rate"]
        fitted = float("nan")
        floor = max(1e-12, 1e-6 * float(norms.max()), 1e-6 * float(res["below_norms"].max()))
        ok = (norms > floor) & (res["below_norms"] > floor)
        if rate > 0.0 and int(ok.sum()) >= 2:
            ratio = np.log(norms[ok] / res["below_norms"][ok])
            fitted = float(np.polyfit(family.times[ok], ratio, 1)[0])
        levels.append({
            "level": level,
            "site": res["site"],
            "nominal_rate": rate,
            "fitted_rate": None if np.isnan(fitted) else -fitted,
            "max_relative_error": res["max_relative_error"],
        })
    with (out / "ld_norms.csv").open("w") as fh:
        fh.write(f"# selrec {__version__} config {exp.config_hash}\n")
        fh.write("t," + ",".join(f"level_{k}" for k in norm_cols) + "\n")
        for j, t in enumerate(family.times):
            fh.write(
                ",".join([repr(float(t))] + [repr(float(norm_cols[k][j])) for k in norm_cols])
                + "\n"
            )
    _write_json(out / "ld_rates.json", {**_stamp(exp), "levels": levels})
    print(
        "ld: "
        + "; ".join(
            f"site {row['site']}: nominal {row['nominal_rate']:.3g}, fitted "
            + (f"{row['fitted_rate']:.3g}" if row["fitted_rate"] is not None else "n/a")
            for row in levels
        )
    )
    return 0


# -- verify -----------------------------------------------------------------------


def _check_solver_agreement(exp: ExperimentConfig) -> dict:
    t = exp.settings.t_max
    ode = integrate_ode(exp.cfg, exp.omega0, exp.settings).final()
    rec = recursive_solve(exp.cfg, exp.omega0, exp.settings).solution.final()
    semi = semigroup_solve(exp.cfg, exp.omega0, t, exp.settings.quad_tol)
    pair = {
        "ode_recursion": l1_distance(ode, rec),
        "ode_semigroup": l1_distance(ode, semi),
        "recursion_semigroup": l1_distance(rec, semi),
    }
    worst = max(pair.values())
    return {
        "name": "solver_agreement",
        "passed": bool(worst <= exp.agreement_tol),
        "pairwise_l1": {k: float(v) for k, v in pair.items()},
        "tolerance": exp.agreement_tol,
    }


def _check_product_algebra(exp: ExperimentConfig, seed: int) -> dict:
    rng = spawn_stream(seed, 101)
    cfg = exp.cfg
    worst = 0.0
    for _ in range(50):
        sets = []
        for _ in range(3):
            k = int(rng.integers(1, cfg.n + 1))
            sets.append(tuple(sorted(rng.choice(cfg.sites, size=k, replace=False))))
        mus = []
        for sites_ in sets:
            v = rng.random(2 ** len(sites_))
            mus.append(ProbabilityMeasure(sites_, v / v.sum()))
        left = boxtimes(boxtimes(mus[0], mus[1]), mus[2])
        right = boxtimes(mus[0], boxtimes(mus[1], mus[2]))
        worst = max(worst, float(np.abs(left.values - right.values).sum()))
    return {
        "name": "product_associativity",
        "passed": bool(worst <= 1e-12),
        "max_deviation": worst,
        "tolerance": 1e-12,
    }


def _check_ld_identity(exp: ExperimentConfig) -> dict:
    family = recursive_solve(exp.cfg, exp.omega0, exp.settings)
    worst = 0.0
    for level in range(1, len(family.levels)):
        res = ld_decay_residual(family, level)
        worst = max(worst, res["max_relative_error"])
    return {
        "name": "ld_decay_identity",
        "passed": bool(worst <= 1e-4),
        "max_relative_error": worst,
        "tolerance": 1e-4,
    }


def _check_selection_duality(exp: ExperimentConfig) -> dict:
    cfg = exp.cfg
    nu = exp.omega0
    f0 = fit_fraction(nu, cfg.i_star)
    worst = 0.0
    for t in (0.3, 1.0):
        for k in (1, 2, 5):
            lhs = ancestor_mixture(cfg, k, selection_flow(cfg, nu, t))
            g = yule_pgf(cfg.s, t, 1.0 - f0)
            y = g ** k
            rhs = cond_unfit(nu, cfg.i_star).scale(y).add(
                cond_fit(nu, cfg.i_star).scale(1.0 - y)
            )
            worst = max(worst, l1_distance(lhs, rhs))
    return {
        "name": "selection_duality_closed_form",
        "passed": bool(worst <= 1e-12),
        "max_l1": worst,
        "tolerance": 1e-12,
    }


def _check_duality_mc(exp: ExperimentConfig, seed: int, threads: int) -> list[dict]:
    out = []
    t = min(1.0, exp.settings.t_max) if exp.settings.t_max > 0 else 1.0
    reps = min(exp.replicates, 50_000)
    for flavor in ("counts", "partition", "runtimes"):
        start = _canonical_start(exp.cfg, flavor)
        rep = duality_check(
            exp.cfg, exp.omega0, start, t, reps, seed + 7, threads=threads
        )
        out.append({
            "name": f"duality_mc_{flavor}",
            "passed": bool(rep.max_abs_z <= exp.z_threshold),
            "max_abs_z": float(rep.max_abs_z),
            "replicates": reps,
            "tolerance": exp.z_threshold,
        })
    return out


def _check_solution_mc(exp: ExperimentConfig, seed: int, threads: int) -> list[dict]:
    out = []
    t = min(1.0, exp.settings.t_max) if exp.settings.t_max > 0 else 1.0
    reps = min(exp.replicates, 50_000)
    settings = SolverSettings(t_max=t, grid_steps=64, quad_tol=1e-9)
    reference = integrate_ode(exp.cfg, exp.omega0, settings).final_probability()
    for flavor in ("counts", "partition", "runtimes"):
        est = mc_solution_estimate(
            exp.cfg, exp.omega0, t, reps, seed + 13, flavor=flavor, threads=threads
        )
        z = float(np.max(np.abs(est.z_scores(reference))))
        out.append({
            "name": f"solution_mc_{flavor}",
            "passed": bool(z <= exp.z_threshold),
            "max_abs_z": z,
            "replicates": reps,
            "tolerance": exp.z_threshold,
        })
    return out


def _check_marginals(exp: ExperimentConfig) -> dict:
    cfg = exp.cfg
    worst = 0.0
    full = integrate_ode(exp.cfg, exp.omega0, exp.settings)
    others = [i for i in cfg.sites if i != cfg.i_star]
    for mask in range(2 ** len(others)):
        subset = [cfg.i_star] + [a for j, a in enumerate(others) if (mask >> j) & 1]
        sub = marginal_sre_solve(cfg, exp.omega0, subset, exp.settings)
        proj = full.final().project(subset)
        worst = max(worst, l1_distance(sub.final(), proj))
    return {
        "name": "marginal_consistency",
        "passed": bool(worst <= exp.agreement_tol),
        "max_l1": worst,
        "tolerance": exp.agreement_tol,
    }


def _check_encoding(exp: ExperimentConfig, seed: int) -> dict:
    rng = spawn_stream(seed, 29)
    cfg = exp.cfg
    bad = 0
    for _ in range(200):
        m = rng.integers(0, 4, size=cfg.n)
        m[cfg.i_star - 1] = rng.integers(1, 5)
        wp = decode(m, cfg)
        if not np.array_equal(encode(wp, cfg), m):
            bad += 1
    return {
        "name": "encode_decode_roundtrip",
        "passed": bool(bad == 0),
        "failures": bad,
        "trials": 200,
    }


def cmd_verify(args) -> int:
    exp = ExperimentConfig.from_file(args.config)
    seed = args.seed if args.seed is not None else exp.seed
    threads = _thread_count(args)
    checks = [
        _check_solver_agreement(exp),
        _check_product_algebra(exp, seed),
        _check_ld_identity(exp),
        _check_selection_duality(exp),
        *_check_duality_mc(exp, seed, threads),
        *_check_solution_mc(exp, seed, threads),
        _check_marginals(exp),
        _check_encoding(exp, seed),
    ]
    ok = all(c["passed"] for c in checks)
    payload = {
        **_stamp(exp),
        "seed": seed,
        "passed": ok,
        "checks": checks,
    }
    _write_json(Path(args.out) / "verify_report.json", payload)
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}")
    print(f"verify: {'all checks passed' if ok else 'FAILURES present'}")
    return 0 if ok else VERIFICATION_EXIT


# -- entry point --------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="experiment config JSON")
    sub.add_argument("--out", default=".", help="output directory")
    sub.add_argument("--seed", type=int, default=None, help="seed override")
    sub.add_argument("--replicates", type=int, default=None)
    sub.add_argument("--threads", type=int, default=None,
                     help="worker threads (default: SELREC_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="selrec", description=__doc__)
    parser.add_argument("--version", action="version", version=f"selrec {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)
    p = subs.add_parser("solve", help="integrate the forward dynamics")
    p.add_argument("--method", choices=["ode", "recursion", "semigroup", "all"],
                   default=None)
    _add_common(p)
    p.set_defaults(func=cmd_solve)
    for name, fn, help_ in (
        ("dual", cmd_dual, "Monte Carlo estimates from the dual processes"),
        ("moran", cmd_moran, "finite-population convergence study"),
        ("verify", cmd_verify, "deterministic verification suite"),
        ("asymptotics", cmd_asymptotics, "long-time product limit"),
        ("ld", cmd_ld, "linkage decay along the recursion"),
    ):
        p = subs.add_parser(name, help=help_)
        _add_common(p)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return VALIDATION_EXIT
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERICAL_EXIT
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return VALIDATION_EXIT


if __name__ == "__main__":
    sys.exit(main())
