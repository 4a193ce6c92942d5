"""Command-line front end.

Subcommands map one-to-one onto the library operations; every run writes its
fully resolved configuration (timestamp comment included) next to the data
files, which themselves are timestamp-free and byte-reproducible from the
seed.  Exit codes: 0 success, 1 configuration/validation error, 2 numeric
abort (blowup or a violated identity in ``verify-identities``).
"""

from __future__ import annotations

import argparse
import datetime
import math
import sys
from pathlib import Path

import numpy as np

from . import deviations as dev
from .config import SCHEMA, ConfigError, RunConfig, load_config, preset
from .dynamics import (
    BlowupError,
    ScalingLaw,
    dense_nse,
    energy_report,
    solve_lans,
    solve_nse,
    solve_skeleton,
    solve_unified,
)
from .noise import Control, control_cost, trajectory_wiener, zero_control
from .runio import (
    load_control,
    save_control,
    save_field,
    save_trajectory,
    write_csv,
    write_ndjson,
    write_outputs,
)
from .spectral import calibrate_estimates, identity_report, verify_operator_bounds

SUBCOMMANDS = (
    "verify-identities",
    "simulate-nse",
    "simulate-lans",
    "simulate-unified",
    "skeleton",
    "rate",
    "mc-tails",
    "converge",
    "weak-probe",
    "mdp-check",
)


def _build_parser():
    top = argparse.ArgumentParser(
        prog="lans2d",
        description="Pseudo-spectral toolkit for the smoothed 2D stochastic "
        "fluid model and its deviation principles.",
    )
    sub = top.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="run document path")
        p.add_argument("--preset", type=str, default=None,
                       help="named preset: taylor-green, single-shear, ou-toy, unified-default")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--workers", type=int, default=1, help="Monte Carlo worker processes")
        p.add_argument("--out-dir", type=str, default=None, help="output directory")
        p.add_argument("--format", choices=("csv", "ndjson"), default="csv")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override any config key (repeatable)")
        p.add_argument("--n", type=int, default=None, help="lattice size override")
        p.add_argument("--alpha", type=float, default=None, help="alpha override")
        p.add_argument("--delta", type=int, default=None, help="delta override")
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--t-final", type=float, default=None)
        if name == "verify-identities":
            p.add_argument("--trials", type=int, default=None)
        if name == "mc-tails":
            p.add_argument("--samples", type=int, default=None)
            p.add_argument("--alphas", type=str, default=None, help="comma list")
        if name in ("converge", "mdp-check"):
            p.add_argument("--samples", type=int, default=None)
            p.add_argument("--alphas", type=str, default=None)
        if name == "weak-probe":
            p.add_argument("--indices", type=str, default=None, help="comma list of oscillation indices")
        if name == "skeleton":
            p.add_argument("--control", type=str, default=None, help="control CSV path")
        if name == "rate":
            p.add_argument("--level", type=float, default=None)
    return top


def _apply_set_overrides(cfg: RunConfig, pairs):
    for pair in pairs:
        if "=" not in pair or "." not in pair.split("=", 1)[0]:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {pair!r}")
        where, value = pair.split("=", 1)
        section, key = where.strip().split(".", 1)
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"--set: unknown key {section}.{key}")
        attr, parser = SCHEMA[section][key]
        try:
            setattr(cfg, attr, None if value.strip().lower() == "none" else parser(value))
        except ValueError as exc:
            raise ConfigError(f"--set {pair!r}: {exc}") from exc


def _resolve_config(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        cfg = preset("unified-default")
    _apply_set_overrides(cfg, args.set)
    for attr, flag in (
        ("seed", "seed"), ("n", "n"), ("alpha", "alpha"), ("delta", "delta"),
        ("dt", "dt"), ("t_final", "t_final"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            setattr(cfg, attr, v)
    if getattr(args, "trials", None) is not None:
        cfg.trials = args.trials
    if getattr(args, "samples", None) is not None:
        cfg.samples = args.samples
    if getattr(args, "alphas", None):
        cfg.alphas = tuple(float(t) for t in args.alphas.split(","))
    if getattr(args, "indices", None):
        cfg.indices = tuple(int(t) for t in args.indices.split(","))
    if getattr(args, "level", None) is not None:
        cfg.level = args.level
    cfg.validate()
    return cfg


def _out_dir(args) -> Path:
    base = Path(args.out_dir) if args.out_dir else Path("runs") / args.command
    base.mkdir(parents=True, exist_ok=True)
    return base


def _echo_config(cfg: RunConfig, out: Path):
    stamp = datetime.datetime.now().isoformat(timespec="seconds")
    text = f"# written: {stamp}\n" + cfg.to_document()
    (out / "resolved_config.txt").write_text(text)


def _emit_results(rows, out: Path, name: str, columns=None):
    """Deviation results: NDJSON records plus a flat CSV summary."""
    write_ndjson(out / f"{name}.ndjson", rows)
    write_csv(out / f"{name}.csv", rows, columns=columns or list(rows[0].keys()))


def _wiener_for(cfg: RunConfig, solver_cfg, index: int = 0):
    if solver_cfg.noise is None:
        return None
    return trajectory_wiener(
        solver_cfg.noise.rank, solver_cfg.dt, solver_cfg.steps, cfg.seed, index
    )


def _control_from_config(cfg: RunConfig, scfg, path_override=None):
    """Control source precedence: explicit file, config file, inline constant."""
    path = path_override or cfg.control_path
    if path:
        return load_control(path, dt=cfg.dt)
    if cfg.control_constant is not None:
        vals = np.broadcast_to(
            np.asarray(cfg.control_constant, float), (scfg.steps, len(cfg.control_constant))
        ).copy()
        return Control(cfg.dt, vals)
    return None


# ---------------------------------------------------------------------------
# Subcommand drivers
# ---------------------------------------------------------------------------


def _cmd_verify_identities(cfg: RunConfig, args, out: Path) -> int:
    lat = cfg.build_lattice()
    rows = []
    ids = identity_report(lat, trials=cfg.trials, seed=cfg.seed)
    for name, resid in ids.items():
        rows.append({"check": name, "value": resid, "bound": 1e-10, "ok": resid <= 1e-10})
    for alpha in (cfg.alpha,) if cfg.alpha > 0 else (0.3,):
        rep = verify_operator_bounds(lat, alpha, trials=cfg.trials, seed=cfg.seed)
        rows.append({"check": f"smoother_damping(alpha={alpha:g})",
                     "value": rep.max_smoother_damping, "bound": 1.0,
                     "ok": rep.max_smoother_damping <= 1.0})
        rows.append({"check": f"halfpower_damping(alpha={alpha:g})",
                     "value": rep.max_halfpower_damping, "bound": 0.5,
                     "ok": rep.max_halfpower_damping <= 0.5 + 1e-15})
        rows.append({"check": f"smoothing_gap(alpha={alpha:g})",
                     "value": rep.smoothing_gap_max_ratio, "bound": 1.0,
                     "ok": rep.smoothing_gap_max_ratio <= 1.0 + 1e-12})
    calib = calibrate_estimates(lat, trials=min(cfg.trials, 300), seed=cfg.seed)
    for name, c in calib.items():
        rows.append({"check": f"estimate_constant[{name}]", "value": c, "bound": math.inf, "ok": True})
    write_outputs(rows, out / f"identities.{args.format}", args.format,
                  columns=["check", "value", "bound", "ok"], units="value: dimensionless residual/ratio")
    bad = [r for r in rows if not r["ok"]]
    for r in rows:
        print(f"{'PASS' if r['ok'] else 'FAIL'} {r['check']}: {r['value']:.3e}")
    return 2 if bad else 0


def _cmd_simulate_nse(cfg: RunConfig, args, out: Path) -> int:
    lat = cfg.build_lattice()
    xi = cfg.build_initial(lat)
    scfg = cfg.build_solver_config(lat, noise=None, alpha=0.0)
    traj = solve_nse(xi, scfg)
    save_trajectory(traj, out / f"trajectory.{args.format}", args.format)
    rep = energy_report(traj, scfg)
    write_csv(out / "energy.csv", [rep.__dict__], units="norms squared, viscous time units")
    save_field(xi, out / "initial_field.tsv")
    print(f"final |u| = {traj.norm_h[-1]:.6e} at t = {traj.times[-1]:g}")
    return 0


def _cmd_simulate_lans(cfg: RunConfig, args, out: Path) -> int:
    lat = cfg.build_lattice()
    xi = cfg.build_initial(lat)
    scfg = cfg.build_solver_config(lat)
    wiener = _wiener_for(cfg, scfg)
    traj = solve_lans(xi, scfg, wiener)
    save_trajectory(traj, out / f"trajectory.{args.format}", args.format)
    print(f"final |u_alpha| = {traj.norm_h[-1]:.6e} (alpha={cfg.alpha:g})")
    return 0


def _cmd_simulate_unified(cfg: RunConfig, args, out: Path) -> int:
    lat = cfg.build_lattice()
    xi = cfg.build_initial(lat)
    scfg = cfg.build_solver_config(lat)
    wiener = _wiener_for(cfg, scfg)
    nse = dense_nse(xi, scfg) if cfg.delta == 1 else None
    h = _control_from_config(cfg, scfg)
    traj = solve_unified(cfg.delta, xi, scfg, h=h, wiener=wiener, nse=nse)
    save_trajectory(traj, out / f"trajectory.{args.format}", args.format)
    print(f"delta={cfg.delta}: final |y| = {traj.norm_h[-1]:.6e}")
    return 0


def _cmd_skeleton(cfg: RunConfig, args, out: Path) -> int:
    lat = cfg.build_lattice()
    xi = cfg.build_initial(lat)
    scfg = cfg.build_solver_config(lat)
    h = _control_from_config(cfg, scfg, path_override=getattr(args, "control", None))
    if h is None:
        h = zero_control(scfg.noise.rank, cfg.dt, scfg.steps)
    nse = dense_nse(xi, scfg) if cfg.delta == 1 else None
    traj = solve_skeleton(cfg.delta, xi, scfg, h, nse=nse)
    save_trajectory(traj, out / f"trajectory.{args.format}", args.format)
    write_csv(out / "control_summary.csv",
              [{"cost": control_cost(h), "steps": h.steps, "rank": h.rank}],
              units="cost: control energy")
    print(f"skeleton delta={cfg.delta}: final |y| = {traj.norm_h[-1]:.6e}, "
          f"control cost = {control_cost(h):.6e}")
    return 0


def _cmd_rate(cfg: RunConfig, args, out: Path) -> int:
    lat = cfg.build_lattice()
    xi = cfg.build_initial(lat)
    scfg = cfg.build_solver_config(lat)
    level = cfg.level if cfg.level is not None else 0.3
    g = cfg.observable_field(lat)
    problem = dev.RateProblem(
        cfg.delta, dev.TerminalObservable(g, level),
        beta_schedule=cfg.beta_schedule, tolerance=cfg.tolerance,
        max_iterations=cfg.max_iterations,
    )
    nse = dense_nse(xi, scfg) if cfg.delta == 1 else None
    result = dev.rate_function(problem, scfg, xi, nse=nse)
    save_control(result.control, out / "optimal_control.csv")
    row = {
        "delta": cfg.delta, "level": level, "cost": result.cost,
        "residual": result.residual, "converged": result.converged,
        "kkt_residual": result.kkt_residual if result.kkt_residual is not None else "nan",
        "bound": result.details.get("bound", ""),
    }
    row["master_seed"] = cfg.seed
    _emit_results([row], out, "rate")
    print(f"rate(delta={cfg.delta}, level={level:g}) = {result.cost:.8g} "
          f"(residual {result.residual:.3e}, converged={result.converged})")
    return 0


def _build_event(cfg: RunConfig, lat):
    if cfg.threshold is not None:
        return dev.SupNormEvent(cfg.threshold)
    level = cfg.level if cfg.level is not None else 0.3
    return dev.TerminalObservableEvent(cfg.observable_field(lat), level)


def _cmd_mc_tails(cfg: RunConfig, args, out: Path) -> int:
    lat = cfg.build_lattice()
    xi = cfg.build_initial(lat)
    scfg = cfg.build_solver_config(lat)
    event = _build_event(cfg, lat)
    rows = []
    for alpha in cfg.alphas:
        est = dev.mc_tail(
            cfg.delta, alpha, event, cfg.samples, scfg, xi,
            master_seed=cfg.seed, workers=args.workers,
        )
        rows.append({
            "alpha": est.alpha, "delta": est.delta, "event": est.event,
            "n_samples": est.n_samples, "hits": est.hits, "p_hat": est.p_hat,
            "speed": est.speed,
            "rate_estimate": est.rate_estimate if est.rate_estimate is not None else "nan",
            "wilson_low": est.wilson_low, "wilson_high": est.wilson_high,
            "master_seed": est.master_seed,
        })
        print(f"alpha={alpha:g}: p_hat={est.p_hat:.3e} "
              f"rate={est.rate_estimate if est.rate_estimate is not None else float('nan'):.6g}")
    _emit_results(rows, out, "tails")
    return 0


def _cmd_converge(cfg: RunConfig, args, out: Path) -> int:
    lat = cfg.build_lattice()
    xi = cfg.build_initial(lat)
    scfg = cfg.build_solver_config(lat)
    rows = dev.convergence_study(cfg.alphas, cfg.samples, scfg, xi, master_seed=cfg.seed)
    for r in rows:
        r["master_seed"] = cfg.seed
    _emit_results(rows, out, "converge")
    for r in rows:
        print(f"alpha={r['alpha']:g}: estimate={r['estimate']:.6e}")
    return 0


def _cmd_weak_probe(cfg: RunConfig, args, out: Path) -> int:
    lat = cfg.build_lattice()
    xi = cfg.build_initial(lat)
    scfg = cfg.build_solver_config(lat)
    rows = dev.weak_continuity_probe(
        cfg.delta, cfg.indices, scfg, xi, amplitude=cfg.amplitude,
        basis_count=cfg.basis_count,
    )
    _emit_results(rows, out, "weak_probe")
    for r in rows:
        print(f"oscillation={r['oscillation']}: e={r['e']:.6e} d1={r['d1']:.6e}")
    return 0


def _cmd_mdp_check(cfg: RunConfig, args, out: Path) -> int:
    lat = cfg.build_lattice()
    xi = cfg.build_initial(lat)
    scfg = cfg.build_solver_config(lat, store_fields=True, record_stride=1)
    wiener = _wiener_for(cfg, scfg)
    scaling = ScalingLaw(cfg.kappa, 1)
    rows = []
    for alpha in cfg.alphas:
        run_cfg = cfg.build_solver_config(lat, store_fields=True, record_stride=1, alpha=alpha)
        nse = dense_nse(xi, run_cfg)
        lans = solve_lans(xi, run_cfg, wiener)
        rescaled = dev.mdp_rescale(lans, nse, scaling, lat)
        unified = solve_unified(1, xi, run_cfg, wiener=wiener, nse=nse)
        gap = max(
            float(lat.norm_h(a - b)) for a, b in zip(rescaled.fields, unified.fields)
        )
        rows.append({
            "alpha": alpha,
            "max_gap": gap,
            "speed_mdp": dev.ldp_speed(scaling, alpha),
            "speed_ldp": dev.ldp_speed(ScalingLaw(cfg.kappa, 0), alpha),
            "sup_norm_rescaled": float(np.max(rescaled.norm_h)),
        })
        print(f"alpha={alpha:g}: max |rescaled - unified| = {gap:.3e}")
    for r in rows:
        r["master_seed"] = cfg.seed
    _emit_results(rows, out, "mdp_check")
    return 0


_DRIVERS = {
    "verify-identities": _cmd_verify_identities,
    "simulate-nse": _cmd_simulate_nse,
    "simulate-lans": _cmd_simulate_lans,
    "simulate-unified": _cmd_simulate_unified,
    "skeleton": _cmd_skeleton,
    "rate": _cmd_rate,
    "mc-tails": _cmd_mc_tails,
    "converge": _cmd_converge,
    "weak-probe": _cmd_weak_probe,
    "mdp-check": _cmd_mdp_check,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out = _out_dir(args)
    _echo_config(cfg, out)
    try:
        return _DRIVERS[args.command](cfg, args, out)
    except BlowupError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        if exc.record is not None:
            save_trajectory(exc.record, out / "last_good.csv")
        return 2
    except (ValueError, FloatingPointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
