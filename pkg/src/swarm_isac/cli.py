"""Command-line entry point: ``swarm-isac {run,sweep,baseline,check-gradients}``."""

from __future__ import annotations

import argparse
import math
import sys

from .admm import run as admm_run
from .exceptions import SwarmIsacError
from .experiments import (ExperimentConfig, ResultRow, SweepResult, default_out_dir, emit,
                          generate_scenario, load_config_file, run_sweep)
from .gradients import check_gradients
from .metrics import objective
from .swarm import simulate

RATE_TOL = 1e-4
CRB_TOL = 1e-5

# CLI flag -> ExperimentConfig field
FLAG_FIELDS = {
    "n": "n_list", "m": "m_list", "omega": "omega_list", "schemes": "schemes",
    "rho": "rho", "eta": "eta", "inner_steps": "inner_steps", "max_iters": "max_iters",
    "eps_primal": "eps_primal", "eps_dual": "eps_dual", "engine": "engine", "out": "out_dir",
    "format": "fmt", "wall_time": "record_wall_time", "jobs": "jobs", "r_max": "r_max",
    "cube_side": "cube_side", "offset_range": "offset_range",
}


def _add_common(p, sweep):
    nargs = "+" if sweep else None
    p.add_argument("--n", type=int, nargs=nargs, help="number of UAVs")
    p.add_argument("--m", type=int, nargs=nargs, help="number of user antennas")
    p.add_argument("--omega", type=float, nargs=nargs, help="CRB weight")
    p.add_argument("--seed", type=int, default=None, help="(first) scenario seed")
    if sweep:
        p.add_argument("--seeds", type=int, default=None,
                       help="number of consecutive seeds starting at --seed")
    p.add_argument("--r-max", type=float, help="flight radius in m")
    p.add_argument("--cube-side", type=float, help="side of the deployment cube in m")
    p.add_argument("--offset-range", type=float, help="antenna offsets in [-a, a]^3 m")
    p.add_argument("--config", help="YAML/JSON file with config fields, or a manifest.json")
    p.add_argument("--out", help="output directory (default $SWARM_ISAC_OUT or ./results)")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--rate-units", choices=("nats", "bits"), default="nats",
                   help="units of rates printed on the console; files are always in nats")


def _add_optimizer(p):
    p.add_argument("--rho", type=float, help="ADMM penalty")
    p.add_argument("--eta", type=float, help="gradient step size")
    p.add_argument("--inner-steps", type=int, help="gradient steps per ADMM iteration")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--eps-primal", type=float)
    p.add_argument("--eps-dual", type=float)
    p.add_argument("--engine", choices=("admm", "swarm"),
                   help="monolithic loop or message-passing agents (same results)")
    p.add_argument("--wall-time", action="store_true", default=None,
                   help="record wall-clock times (results are then no longer byte-stable)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="swarm-isac", description="UAV swarm placement for joint rate and localization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="optimize one scenario and write its trace")
    _add_common(p, sweep=False)
    _add_optimizer(p)

    p = sub.add_parser("sweep", help="run the (N, M, omega, seed, scheme) grid")
    _add_common(p, sweep=True)
    _add_optimizer(p)
    p.add_argument("--schemes", nargs="+", choices=("optimized", "uniform", "random"))
    p.add_argument("--jobs", type=int, help="worker processes")

    p = sub.add_parser("baseline", help="evaluate the uniform/random placements only")
    _add_common(p, sweep=True)
    p.add_argument("--schemes", nargs="+", choices=("uniform", "random"))

    p = sub.add_parser("check-gradients", help="analytic vs finite-difference gradients")
    p.add_argument("--scenarios", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    return parser


def resolve_config(args, **forced):
    """Defaults, then the config file, then flags, then ``forced``."""
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    if "out_dir" not in values:
        values["out_dir"] = default_out_dir()
    for flag, name in FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[name] = value
    seed = getattr(args, "seed", None)
    count = getattr(args, "seeds", None)
    if seed is not None or count is not None:
        start = seed if seed is not None else 0
        values["seeds"] = list(range(start, start + (count if count is not None else 1)))
    values.update(forced)
    return ExperimentConfig.from_mapping(values)


def _rate(value, units):
    return value / math.log(2.0) if units == "bits" else value


def _report_line(label, report, units):
    unit = "bit/s/Hz" if units == "bits" else "nat/s/Hz"
    return (f"{label:>9}: rate {_rate(report.rate_nats, units):.6f} {unit}  "
            f"CRB {report.crb_m2:.6f} m^2  objective {report.objective:.6f}")


def _print_summary(result: SweepResult, units):
    for s in result.summary():
        print(f"{s['scheme']:>9} N={s['N']:<3d} M={s['M']:<2d} omega={s['omega']:<6g} "
              f"rate={_rate(s['rate_nats'], units):10.4f}  crb={s['crb_m2']:10.4f}  "
              f"objective={s['objective']:10.4f}  ok={s['n_ok']} failed={s['n_failed']}")
    for row in result.failures:
        print(f"FAILED {row.cell_id}: {row.status}: {row.message}", file=sys.stderr)


def cmd_run(args):
    cfg = resolve_config(args, schemes=["optimized"])
    n, m, omega, seed = cfg.n_list[0], cfg.m_list[0], cfg.omega_list[0], cfg.seeds[0]
    cfg = ExperimentConfig.from_mapping({**cfg.to_dict(), "n_list": [n], "m_list": [m],
                                         "omega_list": [omega], "seeds": [seed]})
    scenario = generate_scenario(cfg, n, m, seed, omega)
    runner = simulate if cfg.engine == "swarm" else admm_run
    final, trace = runner(scenario, cfg.admm_config())
    initial = objective(scenario.initial_positions, scenario)
    report = objective(final.q, scenario)
    print(_report_line("initial", initial, args.rate_units))
    print(_report_line("optimized", report, args.rate_units))
    last = trace[-1]
    print(f"iterations {final.iter}  primal residual {last.primal_residual:.3e}  "
          f"dual residual {last.dual_residual:.3e}")
    row = ResultRow("optimized", n, m, omega, seed, report.rate_nats, report.crb_m2,
                    report.objective, final.iter, 0.0)
    result = SweepResult(cfg, rows=[row], traces={row.cell_id: trace})
    out = emit(result)
    print(f"wrote {out}")
    return 0


def cmd_sweep(args, schemes=None):
    forced = {"schemes": schemes} if schemes else {}
    cfg = resolve_config(args, **forced)
    result = run_sweep(cfg)
    _print_summary(result, args.rate_units)
    out = emit(result)
    print(f"wrote {out} ({len(result.rows)} cells, {len(result.failures)} failed)")
    return 0


def cmd_baseline(args):
    return cmd_sweep(args, schemes=args.schemes or ["uniform", "random"])


def cmd_check_gradients(args):
    results = check_gradients(n_scenarios=args.scenarios, seed=args.seed)
    worst_rate = max(r["rate_max_rel_err"] for r in results)
    worst_crb = max(r["crb_max_rel_err"] for r in results)
    for i, r in enumerate(results):
        print(f"scenario {i:2d} N={r['n_uavs']} M={r['n_antennas']}  "
              f"rate {r['rate_max_rel_err']:.3e}  crb {r['crb_max_rel_err']:.3e}")
    ok = worst_rate < RATE_TOL and worst_crb < CRB_TOL
    print(f"max relative error: rate {worst_rate:.3e} (tol {RATE_TOL:g}), "
          f"crb {worst_crb:.3e} (tol {CRB_TOL:g}) -> {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "baseline": cmd_baseline,
            "check-gradients": cmd_check_gradients}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (SwarmIsacError, ValueError, OSError) as exc:
        print(f"swarm-isac: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
