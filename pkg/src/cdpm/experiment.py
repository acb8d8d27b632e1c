"""Training, sampling, evaluation and paired DDPM/CDPM comparison runs."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import CONFIG_VERSION, RunConfig
from .data import Dataset, generate_dataset, item_stem, load_dataset, read_manifest
from .denoiser import Denoiser, load_checkpoint
from .diffusion import sample_chains, training_step
from .errors import DataError, InvalidInputError
from .io import read_ply, write_ply
from .metrics import CHAMFER_CONVENTION, drift_stats, evaluate
from .optim import AdamW
from .rng import make_rng, standard_normal

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
TRAIN_STREAM = 0x545241494E
FIXED_STREAM = 0x4649584544
MASK_STREAM = 0x4D41534B


def derive_seed(*parts: int) -> int:
    """A 63-bit seed determined by an integer path."""
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1))


# --- dataset -------------------------------------------------------------------

def generate(cfg: RunConfig, root=None) -> Path:
    root = Path(root or cfg.dataset)
    return generate_dataset(cfg.data).save(root)


def open_dataset(cfg: RunConfig, root=None) -> Dataset:
    root = Path(root or cfg.dataset)
    manifest = read_manifest(root)
    if manifest["config"]["N"] != cfg.N:
        raise InvalidInputError(
            f"dataset {root} has N={manifest['config']['N']} but the config asks for N={cfg.N}")
    return load_dataset(root)


# --- training ------------------------------------------------------------------

@dataclass
class TrainResult:
    denoiser: Denoiser
    losses: np.ndarray
    violations: int
    checkpoint: Path | None


def train(cfg: RunConfig, ds: Dataset, out=None, *, log_every: int = 500) -> TrainResult:
    """Fit a denoiser on ``ds.train`` following ``cfg``.

    Writes ``checkpoint.bin`` (periodically and at the end), ``loss.csv`` and
    ``run_config.json`` when ``out`` is given.
    """
    cfg.validate()
    ids = list(ds.train) or list(range(ds.M))
    if not ids:
        raise DataError("dataset has no items to train on")
    if any(ds.items[i].cloud.shape[0] != cfg.N for i in ids):
        raise InvalidInputError("dataset clouds do not match the configured N")
    sched = cfg.schedule.build()
    net = Denoiser(cfg.denoiser_config(), seed=derive_seed(cfg.seed, 1))
    opt = AdamW(cfg.optimizer_config())
    rng = make_rng(cfg.seed, TRAIN_STREAM)
    clouds = np.stack([it.cloud for it in ds.items])
    contexts = [it.context(cfg.cond) for it in ds.items]
    fixed = {}
    if cfg.overfit:
        for i in ids:
            frng = make_rng(cfg.seed, FIXED_STREAM, i)
            fixed[i] = (int(frng.integers(1, sched.T + 1)), standard_normal(frng, (cfg.N, 3)))
    out = Path(out) if out is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "run_config.json")
    losses = np.empty(cfg.total_steps)
    lrs = np.empty(cfg.total_steps)
    viol = np.zeros(cfg.total_steps, dtype=np.int64)
    ckpt = out / "checkpoint.bin" if out is not None else None
    header = {"run_config": cfg.to_dict(), "config_version": CONFIG_VERSION}
    t0 = time.perf_counter()
    for step in range(cfg.total_steps):
        batch = [ids[j] for j in rng.integers(len(ids), size=cfg.batch_size)]
        ctxs = [contexts[i] for i in batch]
        if cfg.mask_ratio > 0:
            ratios = rng.uniform(0.0, cfg.mask_ratio, size=len(batch))
            mseeds = rng.integers(2 ** 62, size=len(batch))
            ctxs = [c.with_mask(float(r), int(s)) for c, r, s in zip(ctxs, ratios, mseeds)]
        kw = {}
        if cfg.overfit:
            kw["t"] = np.array([fixed[i][0] for i in batch])
            kw["noise"] = np.stack([fixed[i][1] for i in batch])
        res = training_step(sched, net, clouds[batch], ctxs, cfg.mode, rng, step=step, **kw)
        lrs[step] = opt.step(net.params, res.grads)
        losses[step] = res.loss
        viol[step] = res.centering_violations
        if ckpt is not None and (step + 1) % cfg.checkpoint_every == 0:
            net.save(ckpt, header | {"step": step + 1})
        if log_every and (step + 1) % log_every == 0:
            log.info("step %d loss %.5f (avg last %d: %.5f) %.1fs", step + 1, res.loss, log_every,
                     losses[step + 1 - log_every:step + 1].mean(), time.perf_counter() - t0)
    if out is not None:
        net.save(ckpt, header | {"step": cfg.total_steps})
        with open(out / "loss.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "loss", "lr", "centering_violations"])
            for s in range(cfg.total_steps):
                w.writerow([s, repr(float(losses[s])), repr(float(lrs[s])), int(viol[s])])
        log.info("centering violations during training: %d", int(viol.sum()))
    return TrainResult(net, losses, int(viol.sum()), ckpt)


def load_model(cfg: RunConfig, path) -> Denoiser:
    net, header = load_checkpoint(path)
    if header.get("config_version") != CONFIG_VERSION:
        raise DataError(f"{path}: checkpoint config version {header.get('config_version')}")
    if net.config != cfg.denoiser_config():
        raise InvalidInputError(
            f"checkpoint architecture {net.config.to_dict()} does not match the config "
            f"{cfg.denoiser_config().to_dict()}")
    return net


# --- sampling ------------------------------------------------------------------

def chain_seed(seed: int, item: int, sample: int) -> int:
    return derive_seed(seed, item, sample)


def sample_items(cfg: RunConfig, net, ds: Dataset, item_ids: Sequence[int], k: int = 1, *,
                 mask_ratio: float | None = None, out=None, chunk: int = 64):
    """Draw ``k`` reconstructions per item.

    Returns ``{item: [(cloud, trace), ...]}``. With ``out`` set, writes
    ``<item>_<j>.ply`` and ``<item>_<j>_drift.csv`` for every chain.
    """
    sched = cfg.schedule.build()
    ratio = cfg.mask_ratio if mask_ratio is None else mask_ratio
    jobs = [(i, j) for i in item_ids for j in range(k)]
    results: dict = {i: [None] * k for i in item_ids}
    for s in range(0, len(jobs), chunk):
        part = jobs[s:s + chunk]
        ctxs = []
        for i, _ in part:
            mseed = derive_seed(cfg.seed, MASK_STREAM, i)
            ctxs.append(ds.items[i].context(cfg.cond, ratio, mseed))
        seeds = [chain_seed(cfg.seed, i, j) for i, j in part]
        x0, traces = sample_chains(sched, net, ctxs, cfg.N, cfg.mode, seeds)
        for (i, j), x, tr in zip(part, x0, traces):
            results[i][j] = (x, tr)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for i, runs in results.items():
            for j, (x, tr) in enumerate(runs):
                write_ply(out / f"{item_stem(i)}_{j}.ply", x)
                (out / f"{item_stem(i)}_{j}_drift.csv").write_text(tr.to_csv())
    return results


# --- evaluation ----------------------------------------------------------------

def _aggregate(rows: list, tau: float, category: str) -> dict:
    n = len(rows)

    def mean(key):
        return float(np.mean([r[key] for r in rows])) if n else 0.0

    return {"category": category, "n_items": n, "chamfer_mean": mean("chamfer"),
            "fscore_mean": mean("fscore"), "precision_mean": mean("precision"),
            "recall_mean": mean("recall"), "tau": tau, "convention": CHAMFER_CONVENTION,
            "aggregation": "per-item then averaged", "per_item": rows}


def score_predictions(preds: dict, ds: Dataset, tau: float, k: int = 1) -> dict:
    """Single-sample and best-of-k reports for ``{item: [cloud, ...]}``."""
    single, oracle = [], []
    for i in sorted(preds):
        gt = ds.items[i].cloud
        reports = [evaluate(p, gt, tau) for p in preds[i][:k]]
        kind = ds.items[i].shape.kind
        first = {"id": int(i), "kind": kind, **_metric_row(reports[0])}
        single.append(first)
        best = int(np.argmax([r.fscore for r in reports]))
        oracle.append({"id": int(i), "kind": kind, "best_index": best, **_metric_row(reports[best])})
    report = {"schema_version": REPORT_SCHEMA_VERSION, "k": k,
              "single": _aggregate(single, tau, "all"),
              "oracle": _aggregate(oracle, tau, "all") if k > 1 else None,
              "by_category": {}}
    for kind in sorted({r["kind"] for r in single}):
        report["by_category"][kind] = _aggregate([r for r in single if r["kind"] == kind], tau, kind)
    return report


def _metric_row(r) -> dict:
    return {"chamfer": r.chamfer, "fscore": r.fscore, "precision": r.precision, "recall": r.recall}


def load_predictions(pred_dir, ds: Dataset, item_ids, k: int) -> dict:
    pred_dir = Path(pred_dir)
    missing = [i for i in item_ids for j in range(k)
               if not (pred_dir / f"{item_stem(i)}_{j}.ply").exists()]
    if missing:
        raise DataError(f"missing predictions for items {sorted(set(missing))}")
    return {i: [read_ply(pred_dir / f"{item_stem(i)}_{j}.ply") for j in range(k)] for i in item_ids}


def evaluate_dir(pred_dir, ds: Dataset, tau: float, k: int = 1, item_ids=None) -> dict:
    ids = list(ds.test) if item_ids is None else list(item_ids)
    return score_predictions(load_predictions(pred_dir, ds, ids, k), ds, tau, k)


# --- comparison ------------------------------------------------------------------

COMPARE_IGNORED = ("mode", "out")


def check_paired(a: RunConfig, b: RunConfig) -> None:
    da, db = a.to_dict(), b.to_dict()
    drift = sorted(k for k in set(da) | set(db) if k not in COMPARE_IGNORED and da.get(k) != db.get(k))
    if drift:
        raise InvalidInputError(f"configs differ beyond 'mode': {drift}")


def run_side(cfg: RunConfig, ds: Dataset, seed: int, out=None, taus=(0.05,)) -> dict:
    cfg = replace(cfg, seed=seed)
    side_out = Path(out) if out is not None else None
    t0 = time.perf_counter()
    res = train(cfg, ds, side_out)
    train_s = time.perf_counter() - t0
    samples = sample_items(cfg, res.denoiser, ds, ds.test, 1,
                           out=None if side_out is None else side_out / "samples")
    preds = {i: [runs[0][0]] for i, runs in samples.items()}
    reports = {str(t): score_predictions(preds, ds, t)["single"] for t in taus}
    drift = [drift_stats(runs[0][1]) for runs in samples.values()]
    return {
        "mode": cfg.mode, "seed": seed, "train_seconds": train_s,
        "final_loss_mean_last_200": float(res.losses[-200:].mean()) if len(res.losses) else None,
        "centering_violations": res.violations,
        "fscore": {t: r["fscore_mean"] for t, r in reports.items()},
        "chamfer_mean": reports[str(taus[0])]["chamfer_mean"],
        "terminal_centroid_mean": float(np.mean([d.terminal_norm for d in drift])),
        "centroid_norm_curve": np.mean([d.centroid_norms for d in drift], axis=0).tolist(),
        "pixel_step_mean": float(np.mean([np.nanmean(d.pixel_displacements) for d in drift])),
    }, res.denoiser


def compare(cfg_a: RunConfig, cfg_b: RunConfig, seeds: Sequence[int], ds: Dataset, out=None,
            taus=(0.05, 0.01)) -> dict:
    """Seed-paired runs of two configs that differ only in ``mode``."""
    check_paired(cfg_a, cfg_b)
    out = Path(out) if out is not None else None
    rows = []
    for s in seeds:
        row = {"seed": int(s)}
        for tag, cfg in (("a", cfg_a), ("b", cfg_b)):
            side_out = None if out is None else out / f"seed{s}_{tag}_{cfg.mode}"
            row[tag], _ = run_side(cfg, ds, s, side_out, taus)
            log.info("seed %d %s: F@%s=%.4f CD=%.5f", s, cfg.mode, taus[0],
                     row[tag]["fscore"][str(taus[0])], row[tag]["chamfer_mean"])
        rows.append(row)
    key = str(taus[0])
    summary = {
        "b_fscore_wins": sum(r["b"]["fscore"][key] >= r["a"]["fscore"][key] for r in rows),
        "b_chamfer_wins": sum(r["b"]["chamfer_mean"] <= r["a"]["chamfer_mean"] for r in rows),
        "a_fscore_mean": float(np.mean([r["a"]["fscore"][key] for r in rows])),
        "b_fscore_mean": float(np.mean([r["b"]["fscore"][key] for r in rows])),
        "a_chamfer_mean": float(np.mean([r["a"]["chamfer_mean"] for r in rows])),
        "b_chamfer_mean": float(np.mean([r["b"]["chamfer_mean"] for r in rows])),
    }
    result = {"schema_version": REPORT_SCHEMA_VERSION, "tau": taus[0], "taus": list(taus),
              "mode_a": cfg_a.mode, "mode_b": cfg_b.mode, "config_a": cfg_a.to_dict(),
              "config_b": cfg_b.to_dict(), "rows": rows, "summary": summary}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "comparison.json", _strip_timing(result))
        with open(out / "drift_curves.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            T = len(rows[0]["a"]["centroid_norm_curve"]) - 1 if rows else 0
            w.writerow(["seed", "mode", "side"] + [f"t{T - k}" for k in range(T + 1)])
            for r in rows:
                for tag in ("a", "b"):
                    w.writerow([r["seed"], r[tag]["mode"], tag] +
                               [repr(v) for v in r[tag]["centroid_norm_curve"]])
    return result


def _strip_timing(obj):
    """Copy without wall-clock fields, which are excluded from hashed artifacts."""
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k != "train_seconds"}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def occlusion_study(cfg: RunConfig, net, ds: Dataset, ratios=(0.2, 0.5), tau: float | None = None):
    """F-Score on the test split with a fixed fraction of object pixels masked."""
    tau = cfg.tau if tau is None else tau
    rows = {}
    for r in ratios:
        samples = sample_items(cfg, net, ds, ds.test, 1, mask_ratio=r)
        preds = {i: [runs[0][0]] for i, runs in samples.items()}
        rows[str(r)] = score_predictions(preds, ds, tau)["single"]["fscore_mean"]
    return rows
