"""Wall-clock of the nested baseline against Sig-DFP, with log-log growth rates.

    python scripts/complexity.py --rounds 5 --out runs/complexity.csv
"""
import argparse
import csv
import logging
from dataclasses import asdict

from sigdfp.driver import RunConfig
from sigdfp.experiments import complexity_study


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rounds", type=int, default=5)
    ap.add_argument("--batch-size", type=int, default=16)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    base = RunConfig(problem="lq", n_rounds=args.rounds, batch_size=args.batch_size)
    rep = complexity_study(base)
    for r in rep.rows:
        print(f"{r.algorithm:8s} ({r.n_inner}, {r.n_outer})  {r.seconds:9.2f} s  {r.memory_bytes / 2**20:8.1f} MiB")
    print(f"nested slope {rep.nested_slope:.3f}   sig-dfp slope {rep.sig_slope:.3f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(asdict(rep.rows[0])), lineterminator="\n")
            w.writeheader()
            w.writerows(asdict(r) for r in rep.rows)


if __name__ == "__main__":
    main()
