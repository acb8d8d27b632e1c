#!/usr/bin/env python3
"""F-Score of a trained checkpoint as silhouette pixels are masked at evaluation."""
import argparse
from dataclasses import replace

from cdpm.config import DESK, RunConfig
from cdpm.data import generate_dataset
from cdpm.experiment import load_model, occlusion_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("checkpoint")
    ap.add_argument("--config", help="run config used for training (default: desk profile)")
    ap.add_argument("--mode", choices=["ddpm", "cdpm"])
    ap.add_argument("--ratios", default="0,0.2,0.5")
    args = ap.parse_args()

    cfg = RunConfig.load(args.config) if args.config else DESK
    if args.mode:
        cfg = replace(cfg, mode=args.mode)
    net = load_model(cfg, args.checkpoint)
    ds = generate_dataset(cfg.data)
    ratios = [float(r) for r in args.ratios.split(",")]
    f = occlusion_study(cfg, net, ds, ratios)
    base = f[str(ratios[0])]
    for r in ratios:
        drop = (base - f[str(r)]) / base if base else float("nan")
        print(f"mask {r:4.2f}  F@{cfg.tau} {f[str(r)]:.4f}  relative drop {100 * drop:5.1f}%")


if __name__ == "__main__":
    main()
