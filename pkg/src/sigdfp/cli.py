"""Command line: ``sigdfp run | baseline | eval``.

Exit codes: 0 success, 1 configuration error (including an unwritable
output directory or an over-budget baseline), 2 numerical abort.
The output directory is taken from ``--outdir``, else ``$SIGDFP_OUTDIR``,
else the config's ``outdir``.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from dataclasses import fields, replace

from . import driver
from . import reporting as rep
from .benchmarks import registry
from .driver import ConfigError, RunConfig
from .sde import NumericalAbort

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2
ENV_OUTDIR = "SIGDFP_OUTDIR"

log = logging.getLogger("sigdfp")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with [run] [sde] [signature] [flow] [training] [problem] sections")
    g = p.add_argument_group("RunConfig fields (override the config file)")
    for f in fields(RunConfig):
        if f.name == "problem_params":
            continue
        flags = [f"--{f.name}"]
        if "_" in f.name:
            flags.append(f"--{f.name.replace('_', '-')}")
        g.add_argument(*flags, dest=f"cfg_{f.name}", metavar="VALUE", default=None)
    g.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="benchmark parameter, e.g. rho=0.3 (lq) or delta=2,2.5 (type range)")


def _overrides(args) -> dict[str, str]:
    out = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    for item in args.param:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
        out[f"problem.{key.strip()}"] = value
    return out


def _resolve(args) -> tuple[RunConfig, dict]:
    overrides = _overrides(args)
    flag_outdir = overrides.pop("outdir", None)
    cfg, given = rep.load_config(args.config, overrides)
    outdir = flag_outdir or os.environ.get(ENV_OUTDIR) or cfg.outdir
    if outdir != cfg.outdir:
        cfg = replace(cfg, outdir=str(outdir))
        given["outdir"] = str(outdir)
    rep.ensure_outdir(cfg.outdir)
    return cfg, given


def _abort_info(exc: NumericalAbort) -> dict:
    return {"reason": str(exc), "iteration": exc.iteration, "step": exc.step, "path": exc.path}


def cmd_run(args) -> int:
    cfg, given = _resolve(args)
    out = rep.ensure_outdir(cfg.outdir)
    t0 = time.perf_counter()
    with rep.RoundLog(out / "rounds.csv") as rounds:
        try:
            result = driver.run_sig_dfp(cfg, on_round=rounds)
        except NumericalAbort as exc:
            rep.write_manifest(out, cfg, given, status="aborted", abort=_abort_info(exc),
                               timing={"seconds": time.perf_counter() - t0,
                                       "rounds_completed": len(getattr(exc, "records", []))})
            print(f"numerical abort: {exc}", file=sys.stderr)
            return EXIT_ABORT
    summary = {}
    if result.test is not None:
        problem = cfg.problem
        rep.write_metrics(out / "metrics.csv", problem, result.test)
        paths = rep.sample_paths(cfg.N, 3, cfg.seed)
        rep.write_trajectories(out / "trajectories.csv", result.test, result.grid, paths)
        summary = {"relative_l2": result.test.metrics, "objective": result.test.objective,
                   "objective_stderr": result.test.stderr, "oracle_value": result.test.oracle_value,
                   "trajectory_paths": paths.tolist()}
    rep.save_run_checkpoint(out / "checkpoint.npz", result)
    secs = [r.seconds for r in result.records]
    rep.write_manifest(out, cfg, given, timing={"seconds": result.seconds, "rounds_completed": len(secs),
                                                "mean_round_seconds": sum(secs) / max(len(secs), 1)},
                       summary=summary)
    for q, v in summary.get("relative_l2", {}).items():
        print(f"{q:>6s}  relative L2 {v:.4g}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg, given = _resolve(args)
    out = rep.ensure_outdir(cfg.outdir)
    try:
        with rep.RoundLog(out / "rounds.csv") as rounds:
            res = driver.run_nested_baseline(cfg, args.n_inner, args.n_outer, args.memory_budget, on_round=rounds)
    except driver.MemoryBudgetExceeded as exc:
        rep.write_manifest(out, cfg, given, status="rejected", abort={"reason": str(exc)}, command="baseline")
        raise ConfigError(str(exc)) from None
    except NumericalAbort as exc:
        rep.write_manifest(out, cfg, given, status="aborted", abort=_abort_info(exc), command="baseline")
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("algorithm", "n_inner", "n_outer", "seconds", "memory_bytes"))
        w.writerow(("nested", res.n_inner, res.n_outer, rep.fmt(res.seconds), res.memory_bytes))
    rep.write_manifest(out, cfg, given, command="baseline",
                       timing={"seconds": res.seconds, "memory_bytes": res.memory_bytes,
                               "n_inner": res.n_inner, "n_outer": res.n_outer})
    print(f"nested ({res.n_inner}, {res.n_outer}): {res.seconds:.3f} s")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        cfg, nets, flow, meta = rep.load_run_checkpoint(args.checkpoint)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"checkpoint: cannot load {args.checkpoint}: {exc}") from None
    outdir = args.outdir or os.environ.get(ENV_OUTDIR) or cfg.outdir
    out = rep.ensure_outdir(outdir)
    problem = registry.make_problem(cfg.problem, cfg.problem_params, cfg.n0)
    test = driver.regenerate_test_split(cfg, problem)
    ref = registry.reference(problem, test.types, test.x0, test.noise)
    try:
        ev = driver.evaluate(problem, nets, flow, test, ref)
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    rep.write_metrics(out / "metrics.csv", cfg.problem, ev)
    paths = rep.sample_paths(test.size, 3, cfg.seed)
    rep.write_trajectories(out / "trajectories.csv", ev, test.noise.grid, paths)
    for q, v in ev.metrics.items():
        print(f"{q:>6s}  relative L2 {v:.4g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sigdfp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", allow_abbrev=False, help="signatured deep fictitious play")
    _add_config_flags(run)
    base = sub.add_parser("baseline", allow_abbrev=False, help="nested-loop baseline with empirical inner averages")
    _add_config_flags(base)
    base.add_argument("--n-inner", type=int, required=True)
    base.add_argument("--n-outer", type=int, required=True)
    base.add_argument("--memory-budget", type=int, default=2**31, help="bytes (default 2 GiB)")
    ev = sub.add_parser("eval", allow_abbrev=False, help="metrics of a checkpoint on its regenerated test split")
    ev.add_argument("checkpoint")
    ev.add_argument("--outdir")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    handler = {"run": cmd_run, "baseline": cmd_baseline, "eval": cmd_eval}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
