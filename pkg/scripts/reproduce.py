"""Desk-scale reproduction of one benchmark, written as a normal ``sigdfp run``.

    python scripts/reproduce.py lq --outdir runs/lq
"""
import argparse
import sys

from sigdfp import cli
from sigdfp import reporting as rep
from sigdfp.experiments import THRESHOLDS, desk_config, flow_gap_monotone, objective_gap_in_se


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("problem", choices=sorted(THRESHOLDS))
    ap.add_argument("--outdir", default=None)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = desk_config(args.problem, seed=args.seed).validate()
    outdir = args.outdir or f"runs/{args.problem}"
    code = cli.main(["-v", "run", "--problem", cfg.problem, "--N", str(cfg.N), "--L", str(cfg.L),
                     "--M", str(cfg.M), "--n_rounds", str(cfg.n_rounds), "--seed", str(cfg.seed),
                     "--outdir", outdir])
    if code:
        sys.exit(code)
    metrics = {(r["quantity"], r["metric"]): float(r["value"]) for r in rep.read_csv(f"{outdir}/metrics.csv")}
    for q, tol in THRESHOLDS[args.problem].items():
        v = metrics[(q, "relative_l2")]
        print(f"{q:>6s} {v:.4f}  budget {tol}  {'ok' if v <= tol else 'over'}")
    records = rep.read_rounds(f"{outdir}/rounds.csv")
    for ch, r in flow_gap_monotone(records, cfg.warm_start_rounds).items():
        print(f"flow gap {ch}: worst trailing ratio {r.worst_ratio:.3f}")
    print(f"validation objective off the oracle by {objective_gap_in_se(records, metrics[('J', 'oracle_value')]):.2f} SE")


if __name__ == "__main__":
    main()
