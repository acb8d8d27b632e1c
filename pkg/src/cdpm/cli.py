"""Command-line entry point: ``cdpm {generate,train,sample,eval,compare}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import DESK, RunConfig
from .errors import DataError, DivergedTrainingError, InvalidInputError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="run-config JSON (default: desk profile)")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=["ddpm", "cdpm"])
    p.add_argument("--cond", choices=["L", "G", "G+L"])
    p.add_argument("--mask-ratio", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--oracle-k", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("--dataset", type=Path)
    p.add_argument("--steps", type=int, help="override total training steps")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cdpm", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="build the synthetic dataset")
    _common(p)
    p.add_argument("--items", type=int, help="override the number of items M")

    p = sub.add_parser("train", help="train a denoiser")
    _common(p)

    p = sub.add_parser("sample", help="draw reconstructions from a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--items", default="test", help="'test', 'train', 'all' or comma-separated ids")

    p = sub.add_parser("eval", help="score predictions against the dataset")
    _common(p)
    p.add_argument("--pred", type=Path, required=True)

    p = sub.add_parser("compare", help="seed-paired runs of two configs differing only in mode")
    _common(p)
    p.add_argument("--config-a", type=Path)
    p.add_argument("--config-b", type=Path)
    p.add_argument("--seeds", default="0,1,2,3,4")
    return ap


def resolve_config(args, path: Path | None = None) -> RunConfig:
    path = path or args.config
    cfg = RunConfig.load(path) if path else DESK
    updates = {}
    for name in ("seed", "mode", "cond", "mask_ratio", "tau", "oracle_k"):
        val = getattr(args, name, None)
        if val is not None:
            updates[name] = val
    if args.dataset is not None:
        updates["dataset"] = str(args.dataset)
    if args.out is not None:
        updates["out"] = str(args.out)
    if args.steps is not None:
        updates["total_steps"] = args.steps
    cfg = replace(cfg, **updates)
    if getattr(args, "items", None) is not None and args.command == "generate":
        cfg = replace(cfg, data=replace(cfg.data, M=args.items))
    if args.command == "generate" and args.seed is not None:
        cfg = replace(cfg, data=replace(cfg.data, seed=args.seed))
    return cfg.validate()


def _item_ids(sel: str, ds) -> list:
    if sel == "test":
        return list(ds.test)
    if sel == "train":
        return list(ds.train)
    if sel == "all":
        return list(range(ds.M))
    ids = [int(s) for s in sel.split(",") if s.strip()]
    bad = [i for i in ids if not 0 <= i < ds.M]
    if bad:
        raise InvalidInputError(f"item ids out of range: {bad}")
    return ids


def run(args) -> int:
    from . import experiment as ex

    if args.command == "generate":
        cfg = resolve_config(args)
        root = ex.generate(cfg, args.out or cfg.dataset)
        print(root)
        return EXIT_OK

    if args.command == "train":
        cfg = resolve_config(args)
        ds = ex.open_dataset(cfg)
        res = ex.train(cfg, ds, cfg.out)
        print(f"final loss {res.losses[-1] if len(res.losses) else float('nan'):.6f}; "
              f"centering violations {res.violations}; checkpoint {res.checkpoint}")
        return EXIT_OK

    if args.command == "sample":
        cfg = resolve_config(args)
        ds = ex.open_dataset(cfg)
        net = ex.load_model(cfg, args.checkpoint)
        ids = _item_ids(args.items, ds)
        ex.sample_items(cfg, net, ds, ids, cfg.oracle_k, out=cfg.out)
        print(f"wrote {len(ids) * cfg.oracle_k} clouds to {cfg.out}")
        return EXIT_OK

    if args.command == "eval":
        cfg = resolve_config(args)
        ds = ex.open_dataset(cfg)
        report = ex.evaluate_dir(args.pred, ds, cfg.tau, cfg.oracle_k)
        report["run_config"] = cfg.to_dict()
        out = Path(cfg.out)
        target = out if out.suffix == ".json" else out / "report.json"
        target.parent.mkdir(parents=True, exist_ok=True)
        ex.write_json(target, report)
        line = f"F@{cfg.tau}={report['single']['fscore_mean']:.4f} CD={report['single']['chamfer_mean']:.6f}"
        if report["oracle"]:
            line += f" oracle F={report['oracle']['fscore_mean']:.4f}"
        print(line)
        return EXIT_OK

    if args.command == "compare":
        args.mode = None  # each side carries its own mode
        base = resolve_config(args)
        cfg_a = resolve_config(args, args.config_a) if args.config_a else replace(base, mode="ddpm")
        cfg_b = resolve_config(args, args.config_b) if args.config_b else replace(base, mode="cdpm")
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        ds = ex.open_dataset(cfg_a)
        result = ex.compare(cfg_a, cfg_b, seeds, ds, cfg_a.out)
        s = result["summary"]
        print(f"{cfg_b.mode} >= {cfg_a.mode} in F-Score on {s['b_fscore_wins']}/{len(seeds)} seeds, "
              f"Chamfer on {s['b_chamfer_wins']}/{len(seeds)}")
        return EXIT_OK
    return EXIT_USAGE


def _limit_threads():
    n = os.environ.get("CDPM_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _limit_threads()
    try:
        return run(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergedTrainingError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
