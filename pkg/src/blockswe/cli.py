"""Command-line front end.

Subcommands: ``validate`` checks a config, ``run`` executes a simulation
and writes rasters, timing CSV and figures, ``balance`` fits the per-block
cost model and tunes decompositions, ``make-kochi`` emits a scaled synthetic
coastal config.  Exit codes: 0 success, 2 validation failure, 1 runtime
error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import balance, plots, report
from .config import load_config, save_kochi_config
from .grid import validate_system
from .runner import Simulation

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blockswe",
                                description="nested-grid shallow-water simulator")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a config file")
    v.add_argument("--config", required=True)

    r = sub.add_parser("run", help="run a simulation")
    r.add_argument("--config", required=True)
    r.add_argument("--steps", type=int, default=None)
    r.add_argument("--duration", type=float, default=None,
                   help="simulated seconds (overrides the config duration)")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--decomp", default="equal",
                   help="equal | opt | file:PATH")
    r.add_argument("--model", default="ref",
                   help="cost model for --decomp opt: 'ref' or a model file")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.add_argument("--serial", action="store_true",
                   help="synchronous single-threaded scheduler")
    r.add_argument("--snapshot-every", type=int, default=None, metavar="N",
                   help="also emit rasters every N steps")
    r.add_argument("--trace", default=None, metavar="FILE",
                   help="write a binary message trace")
    r.add_argument("--no-figures", action="store_true")

    b = sub.add_parser("balance", help="cost model and decomposition tuning")
    bsub = b.add_subparsers(dest="balance_command", required=True)

    bf = bsub.add_parser("fit", help="fit the per-block cost model")
    bf.add_argument("--samples", default=None,
                    help="CSV of cell_count,runtime_us rows")
    bf.add_argument("--bench", default=None,
                    help="comma-separated cell counts to microbenchmark")
    bf.add_argument("--repeats", type=int, default=5)
    bf.add_argument("--seed", type=int, default=0)
    bf.add_argument("--out", required=True)

    bo = bsub.add_parser("optimize", help="tune separator positions")
    bo.add_argument("--config", required=True)
    bo.add_argument("--ranks", type=int, required=True)
    bo.add_argument("--level", type=int, default=None,
                    help="restrict to one grid level (1-based)")
    bo.add_argument("--model", default="ref")
    bo.add_argument("--iters", type=int, nargs=2, default=(5000, 5000),
                    metavar=("PHASE1", "PHASE2"))
    bo.add_argument("--seed", type=int, default=0)
    bo.add_argument("--out", required=True)
    bo.add_argument("--no-figures", action="store_true")

    k = sub.add_parser("make-kochi", help="write a scaled synthetic config")
    k.add_argument("--scale", type=float, required=True)
    k.add_argument("--out", required=True)
    return p


def _load_model(spec: str) -> balance.CostModel:
    if spec == "ref":
        return balance.GPU_REFERENCE_MODEL
    return balance.load_cost_model(spec)


def _load_separators(path: str) -> tuple[int, ...]:
    seps = []
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].replace(",", " ")
            seps.extend(int(tok) for tok in line.split())
    return tuple(seps)


def _save_separators(path: str, plan: balance.DecompositionPlan):
    with open(path, "w") as f:
        f.write("# separator positions in the global block list\n")
        f.write(" ".join(str(s) for s in plan.separators) + "\n")


def _build_plan(args, system, settings) -> balance.DecompositionPlan:
    cells = [b.cell_count for _, b in system.all_blocks()]
    if args.decomp.startswith("file:"):
        seps = _load_separators(args.decomp[5:])
        plan = balance.DecompositionPlan(cells=tuple(cells), separators=seps)
        if args.workers not in (1, plan.n_ranks):
            raise ValueError(
                f"plan file defines {plan.n_ranks} ranks, --workers says "
                f"{args.workers}")
        return plan
    if settings.rank_budgets and args.workers == sum(settings.rank_budgets):
        # per-level budgets: one rank never spans two levels
        per_level = []
        for lvl, budget in zip(system.levels, settings.rank_budgets):
            lvl_cells = [b.cell_count for b in lvl.blocks]
            if args.decomp == "opt":
                per_level.append(balance.optimize_plan(
                    lvl_cells, budget, _load_model(args.model), seed=args.seed))
            else:
                per_level.append(balance.equal_cell_plan(lvl_cells, budget))
        return balance.concat_plans(per_level)
    if args.decomp == "equal":
        return balance.equal_cell_plan(cells, args.workers)
    if args.decomp == "opt":
        return balance.optimize_plan(cells, args.workers,
                                     _load_model(args.model), seed=args.seed)
    raise ValueError(f"unknown --decomp {args.decomp!r}")


def _cmd_validate(args) -> int:
    system, settings = load_config(args.config)
    rep = validate_system(system, settings)
    print(rep)
    return EXIT_OK if rep.ok else EXIT_VALIDATION


def _cmd_run(args) -> int:
    system, settings = load_config(args.config)
    rep = validate_system(system, settings)
    if not rep.ok:
        print(rep, file=sys.stderr)
        print("validation failed; not running", file=sys.stderr)
        return EXIT_VALIDATION

    if args.steps is not None:
        n_steps = args.steps
    elif args.duration is not None:
        n_steps = int(round(args.duration / settings.dt))
    else:
        n_steps = settings.n_steps
    plan = _build_plan(args, system, settings)

    os.makedirs(args.out, exist_ok=True)
    sim = Simulation(system, settings, plan)
    threaded = not args.serial
    try:
        if args.snapshot_every:
            done = 0
            run_report = None
            while done < n_steps:
                chunk = min(args.snapshot_every, n_steps - done)
                run_report = sim.run(chunk, threaded=threaded,
                                     trace_path=None)
                done += chunk
                report.emit_rasters(system, sim.accumulators, args.out,
                                    tag=f"_step{done}")
            run_report.steps = n_steps
        else:
            run_report = sim.run(n_steps, threaded=threaded,
                                 trace_path=args.trace)
    except Exception as exc:
        with open(os.path.join(args.out, "run_failed.txt"), "w") as f:
            f.write(f"run aborted; partial outputs are invalid\n{exc}\n")
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    paths = report.emit_rasters(system, sim.accumulators, args.out)
    report.write_timing_csv(run_report, os.path.join(args.out, "timing.csv"))
    _save_separators(os.path.join(args.out, "decomposition.txt"), plan)
    if not args.no_figures:
        plots.plot_timing_breakdown(
            run_report, os.path.join(args.out, "timing_breakdown.png"))
        for lvl in system.levels:
            mosaic, header = report.level_mosaic(
                lvl, lambda b: sim.accumulators[b.block_id].max_eta)
            plots.plot_field(
                mosaic, header,
                os.path.join(args.out, f"max_eta_L{lvl.level_index}.png"),
                title=f"max water level, level {lvl.level_index}")
    print(f"{n_steps} steps on {plan.n_ranks} worker(s); "
          f"wrote {len(paths)} rasters to {args.out}")
    return EXIT_OK


def _cmd_balance_fit(args) -> int:
    if args.samples:
        rows = np.loadtxt(args.samples, delimiter=",", ndmin=2)
        samples = [(float(a), float(b)) for a, b in rows]
    elif args.bench:
        counts = [int(tok) for tok in args.bench.split(",") if tok]
        samples = balance.measure_momentum_cost(counts, repeats=args.repeats,
                                                seed=args.seed)
    else:
        print("balance fit needs --samples or --bench", file=sys.stderr)
        return EXIT_RUNTIME
    model = balance.fit_cost_model(samples)
    os.makedirs(args.out, exist_ok=True)
    balance.save_cost_model(model, os.path.join(args.out, "model.txt"))
    np.savetxt(os.path.join(args.out, "samples.csv"),
               np.array(samples), delimiter=",", header="cells,runtime_us")
    plots.plot_cost_fit(samples, model, os.path.join(args.out, "fit.png"))
    print(f"slope = {model.slope:.6g} us/cell, intercept = "
          f"{model.intercept:.6g} us, R^2 = {model.r_squared:.4f}")
    return EXIT_OK


def _cmd_balance_optimize(args) -> int:
    system, _ = load_config(args.config)
    if args.level is not None:
        levels = [l for l in system.levels if l.level_index == args.level]
        if not levels:
            print(f"no level {args.level} in config", file=sys.stderr)
            return EXIT_RUNTIME
        cells = [b.cell_count for b in levels[0].blocks]
    else:
        cells = [b.cell_count for _, b in system.all_blocks()]
    model = _load_model(args.model)

    baseline = balance.equal_cell_plan(cells, args.ranks)
    optimized, trace = balance.optimize_plan_detailed(
        cells, args.ranks, model, args.iters[0], args.iters[1], args.seed)

    base_max = balance.rank_costs(baseline, model).max()
    opt_max = balance.rank_costs(optimized, model).max()
    os.makedirs(args.out, exist_ok=True)
    _save_separators(os.path.join(args.out, "separators.txt"), optimized)
    report.write_rank_cost_csv(os.path.join(args.out, "rank_costs.csv"),
                               {"equal_cells": baseline, "optimized": optimized},
                               model)
    if not args.no_figures:
        plots.plot_rank_costs({"equal_cells": baseline, "optimized": optimized},
                              model, os.path.join(args.out, "rank_costs.png"))
    print(f"{len(cells)} blocks on {args.ranks} ranks: max predicted cost "
          f"{base_max:.1f} us (equal cells) -> {opt_max:.1f} us (optimized, "
          f"{trace.accepted} accepted moves)")
    return EXIT_OK


def _cmd_make_kochi(args) -> int:
    system, _ = save_kochi_config(args.scale, args.out)
    print(f"wrote {args.out}: {system.n_blocks} blocks, "
          f"{system.cell_count} cells over {len(system.levels)} levels")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "balance":
            if args.balance_command == "fit":
                return _cmd_balance_fit(args)
            return _cmd_balance_optimize(args)
        if args.command == "make-kochi":
            return _cmd_make_kochi(args)
    except Exception as exc:   # uniform runtime-error exit for scripting
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
