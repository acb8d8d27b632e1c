#!/usr/bin/env python3
"""Seed-paired DDPM vs CDPM comparison on the desk profile.

Trains both modes on the same synthetic dataset for every seed, samples the
test split and prints a per-seed table. Artifacts (checkpoints, samples,
comparison.json, drift_curves.csv) land under --out.

    python scripts/run_desk_comparison.py --out runs/desk --seeds 0,1,2,3,4
"""
import argparse
import logging
import time
from dataclasses import replace

from cdpm.config import DESK
from cdpm.data import generate_dataset
from cdpm.experiment import compare


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--steps", type=int, default=DESK.total_steps)
    ap.add_argument("--items", type=int, default=DESK.data.M)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = replace(DESK, total_steps=args.steps, data=replace(DESK.data, M=args.items))
    seeds = [int(s) for s in args.seeds.split(",")]
    ds = generate_dataset(base.data)
    t0 = time.perf_counter()
    res = compare(replace(base, mode="ddpm"), replace(base, mode="cdpm"), seeds, ds, args.out)

    print(f"{'seed':>4} {'F ddpm':>8} {'F cdpm':>8} {'CD ddpm':>9} {'CD cdpm':>9} {'|c0| ddpm':>10} {'|c0| cdpm':>10}")
    for r in res["rows"]:
        a, b = r["a"], r["b"]
        print(f"{r['seed']:>4} {a['fscore']['0.05']:8.4f} {b['fscore']['0.05']:8.4f} "
              f"{a['chamfer_mean']:9.5f} {b['chamfer_mean']:9.5f} "
              f"{a['terminal_centroid_mean']:10.2e} {b['terminal_centroid_mean']:10.2e}")
    s = res["summary"]
    print(f"cdpm wins: F-Score {s['b_fscore_wins']}/{len(seeds)}, Chamfer {s['b_chamfer_wins']}/{len(seeds)}; "
          f"{(time.perf_counter() - t0) / 60:.1f} min")


if __name__ == "__main__":
    main()
