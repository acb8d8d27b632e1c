#!/usr/bin/env python3
"""Centroid drift of reverse chains driven by a zero denoiser.

With nothing to pull it back, the DDPM centroid performs a scaled random walk
whose variance has a closed form; the CDPM centroid stays at the origin. The
script prints both alongside the analytic curve, every --every steps.
"""
import argparse

import numpy as np

from cdpm.config import DESK
from cdpm.diffusion import sample_chains, zero_denoiser


def analytic_curve(sched, n):
    """Per-coordinate centroid variance after each reverse step, from t = T down to 0."""
    v = [1.0 / n]
    for t in range(sched.T, 0, -1):
        noise = sched.sigma[t] ** 2 / n if t > 1 else 0.0
        v.append(v[-1] / sched.alpha[t] + noise)
    return np.array(v)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--chains", type=int, default=1000)
    ap.add_argument("--points", type=int, default=256)
    ap.add_argument("--every", type=int, default=10)
    args = ap.parse_args()

    sched = DESK.schedule.build()
    seeds = list(range(args.chains))
    _, tr_d = sample_chains(sched, zero_denoiser, None, args.points, "ddpm", seeds, cond_width=5)
    _, tr_c = sample_chains(sched, zero_denoiser, None, args.points, "cdpm", seeds, cond_width=5)
    var_d = np.mean([tr.centroid ** 2 for tr in tr_d], axis=(0, 2))
    max_c = np.max([np.abs(tr.centroid).max(axis=1) for tr in tr_c], axis=0)
    ana = analytic_curve(sched, args.points)

    print(f"{'t':>4} {'ddpm var':>12} {'analytic':>12} {'ratio':>6} {'cdpm max':>10}")
    for k in range(0, sched.T + 1, args.every):
        t = sched.T - k
        print(f"{t:>4} {var_d[k]:12.5g} {ana[k]:12.5g} {var_d[k] / ana[k]:6.3f} {max_c[k]:10.2e}")
    if sched.T % args.every:
        print(f"{0:>4} {var_d[-1]:12.5g} {ana[-1]:12.5g} {var_d[-1] / ana[-1]:6.3f} {max_c[-1]:10.2e}")


if __name__ == "__main__":
    main()
