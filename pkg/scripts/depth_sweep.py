"""Consumption-investment test errors against signature depth M.

    python scripts/depth_sweep.py --N 4096 --rounds 200
"""
import argparse
import logging

from sigdfp.experiments import depth_sweep, desk_config


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--N", type=int, default=2**12)
    ap.add_argument("--rounds", type=int, default=200)
    ap.add_argument("--depths", type=int, nargs="+", default=[1, 2, 3, 4])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    base = desk_config("consumption", N=args.N, n_rounds=args.rounds)
    rows = depth_sweep(base, args.depths, args.seeds)
    print("M      pi       c       m   Gamma   seconds")
    for r in rows:
        m = r.metrics
        print(f"{r.M}  {m['pi']:.4f}  {m['c']:.4f}  {m['m']:.4f}  {m['Gamma']:.4f}  {r.seconds:8.1f}")


if __name__ == "__main__":
    main()
