"""Command-line experiment runner: ``sncl run | sweep | report``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import datasets as ds
from .config import ExperimentConfig, load_config
from .errors import ConfigError
from .model import GatedMlp
from .plots import write_line_chart
from .trainer import RunMetrics, train_stream
from .vbs import pruned_fraction

CSV_HEADER = ["protocol", "method", "buffer", "seed_count", "avg_acc_mean", "avg_acc_std", "forgetting_mean"]
VALIDATION_FRACTION = 0.2


def _split_validation(train):
    """Hold out the last fifth of every class as a validation split."""
    keep, val = [], []
    for c in np.unique(train.labels):
        idx = np.flatnonzero(train.labels == c)
        cut = len(idx) - int(round(len(idx) * VALIDATION_FRACTION))
        keep.append(idx[:cut])
        val.append(idx[cut:])
    return train.subset(np.sort(np.concatenate(keep))), train.subset(np.sort(np.concatenate(val)))


def build_stream(cfg: ExperimentConfig, seed, validation=False):
    full = cfg.scale == "full"
    if cfg.protocol == "blobs":
        stream = ds.blobs_split_stream(seed)
        if validation:
            for p in stream.phases:
                p.train, p.test = _split_validation(p.train)
        if cfg.setting:
            stream.setting = cfg.setting
        return stream
    train, test = ds.load_mnist(cfg.scale)
    if validation:
        train, test = _split_validation(train)
    tasks = cfg.tasks or (20 if full else 5)
    per_task = cfg.train_per_task or (None if full else 2000)
    if cfg.protocol == "pmnist":
        return ds.build_pmnist(train, test, tasks, seed, train_per_task=per_task, test_per_task=cfg.test_per_task)
    if cfg.protocol == "rmnist":
        return ds.build_rmnist(train, test, tasks, seed, train_per_task=per_task, test_per_task=cfg.test_per_task)
    if cfg.protocol == "split_mnist":
        pairs = [(2 * i, 2 * i + 1) for i in range(5)]
        return ds.build_split(train, test, pairs, seed, setting=cfg.setting or "class_il",
                              train_per_task=cfg.train_per_task, protocol="split_mnist")
    if cfg.protocol == "mnist360":
        return ds.build_mnist360(train, test, seed, per_pair=cfg.per_pair)
    raise ConfigError(f"unknown protocol {cfg.protocol!r}")


def run_one(cfg: ExperimentConfig, method, seed, validation=False, extra=None, out_dir=None):
    """Train one (method, seed) pair; returns the metrics dict."""
    mcfg = cfg.method_config(method, **(extra or {}))
    stream = build_stream(cfg, seed, validation)
    in_dim = stream.phases[0].train.dim
    model = GatedMlp(in_dim, cfg.hidden, stream.num_classes, seed=seed, gated=mcfg.gates)
    metrics = train_stream(model, stream, mcfg, cfg.buffer, seed)
    if out_dir is not None:
        out_dir = Path(out_dir)
        if cfg.save_checkpoints:
            model.save(out_dir / f"model_{seed}.json")
        if cfg.dump_buffer and metrics.buffer is not None:
            metrics.buffer.dump_jsonl(out_dir / f"buffer_{seed}.jsonl")
    d = metrics.to_dict()
    d["buffer"] = cfg.buffer
    return d, metrics.wall_clock


def _run_job(job):
    cfg, method, seed, validation, extra, out_dir = job
    return run_one(cfg, method, seed, validation, extra, out_dir)


def run_jobs(cfg, jobs):
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_run_job, jobs))
    return [_run_job(j) for j in jobs]


def dump_metrics(d, path):
    Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")


def aggregate_rows(runs):
    """One CSV row per (protocol, method, buffer); failed runs are left out."""
    groups = {}
    for d in runs:
        groups.setdefault((d["protocol"], d["method"], d["buffer"]), []).append(d)
    rows = []
    for (protocol, method, buffer), ds_ in groups.items():
        ok = [d for d in ds_ if d["status"] == "ok"]
        acc = np.array([d["average_accuracy"] for d in ok], dtype=np.float64)
        fgt = np.array([d["forgetting_mean"] for d in ok], dtype=np.float64)
        rows.append({
            "protocol": protocol,
            "method": method,
            "buffer": buffer,
            "seed_count": len(ok),
            "avg_acc_mean": float(acc.mean()) if len(acc) else float("nan"),
            "avg_acc_std": float(acc.std(ddof=1)) if len(acc) > 1 else 0.0,
            "forgetting_mean": float(fgt.mean()) if len(fgt) else float("nan"),
        })
    return rows


def write_aggregate(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([r["protocol"], r["method"], r["buffer"], r["seed_count"],
                        f"{r['avg_acc_mean']:.6f}", f"{r['avg_acc_std']:.6f}", f"{r['forgetting_mean']:.6f}"])


def write_plots(runs, out_dir):
    """accuracy.svg and sparsity.svg: seed-averaged curves per method."""
    by_method = {}
    for d in runs:
        if d["status"] == "ok":
            by_method.setdefault(d["method"], []).append(d)
    if not by_method:
        return []
    acc_series, sp_series = [], []
    for method, group in by_method.items():
        n = min(len(d["accuracy"]) for d in group)
        xs = list(range(1, n + 1))
        acc = [float(np.mean([np.mean(d["accuracy"][i]) for d in group])) for i in range(n)]
        sp = [float(np.mean([pruned_fraction(d["sparsity"][i]) if d["sparsity"][i] else 0.0 for d in group]))
              for i in range(n)]
        acc_series.append((method, xs, acc))
        sp_series.append((method, xs, sp))
    out_dir = Path(out_dir)
    paths = [out_dir / "accuracy.svg", out_dir / "sparsity.svg"]
    write_line_chart(paths[0], "Mean accuracy over evaluation splits", "evaluation point", "accuracy",
                     acc_series, y_range=(0.0, 1.0))
    write_line_chart(paths[1], "Pruned gate fraction", "evaluation point", "fraction pruned", sp_series,
                     y_range=(0.0, max(0.05, max(max(s[2]) for s in sp_series))))
    return paths


def run_experiment(cfg: ExperimentConfig):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for method in cfg.methods:
        (out / method).mkdir(exist_ok=True)
        for seed in cfg.seeds:
            jobs.append((cfg, method, seed, False, None, out / method))
    results = run_jobs(cfg, jobs)
    runs, timing = [], {}
    for (_, method, seed, *_), (d, wall) in zip(jobs, results):
        dump_metrics(d, out / method / f"metrics_{seed}.json")
        runs.append(d)
        timing[f"{method}/{seed}"] = wall
    rows = aggregate_rows(runs)
    write_aggregate(rows, out / "aggregate.csv")
    write_plots(runs, out)
    (out / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
    return rows


def run_sweep(cfg: ExperimentConfig):
    """Score every grid cell on validation splits; write sweep.csv ranked best first."""
    cells = cfg.grid()
    seeds = cfg.sweep_seeds or cfg.seeds
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, method, seed, True, cell, None)
            for cell in cells for method in cfg.methods for seed in seeds]
    results = iter(run_jobs(cfg, jobs))
    ranked = []
    for cell in cells:
        for method in cfg.methods:
            accs = []
            for _ in seeds:
                d, _ = next(results)
                if d["status"] == "ok":
                    accs.append(d["average_accuracy"])
            mean = float(np.mean(accs)) if accs else float("nan")
            std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
            ranked.append({"method": method, **cell, "val_acc_mean": mean, "val_acc_std": std})
    ranked.sort(key=lambda r: (-(r["val_acc_mean"] if r["val_acc_mean"] == r["val_acc_mean"] else -1.0)))
    keys = sorted(cfg.sweep)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "method", *keys, "val_acc_mean", "val_acc_std"])
        for i, r in enumerate(ranked, start=1):
            w.writerow([i, r["method"], *[r[k] for k in keys], f"{r['val_acc_mean']:.6f}", f"{r['val_acc_std']:.6f}"])
    return ranked


def load_runs(run_dir):
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ConfigError(f"run directory {run_dir} does not exist")
    paths = sorted(run_dir.rglob("metrics_*.json"))
    if not paths:
        raise ConfigError(f"no metrics_*.json files under {run_dir}")
    return [json.loads(p.read_text()) for p in paths]


def format_report(runs):
    lines = []
    for d in runs:
        lines.append(f"== {d['protocol']} / {d['method']} / seed {d['seed']} ({d['status']})")
        if d["status"] != "ok":
            lines.append(f"   {d['message']}")
            continue
        lines.append("   accuracy (rows: evaluation points, cols: " + ", ".join(d["split_names"]) + ")")
        for step, row in zip(d["eval_steps"], d["accuracy"]):
            lines.append(f"   step {step:6d}: " + " ".join(f"{a:6.3f}" for a in row))
        lines.append("   forgetting: " + " ".join(f"{f:6.3f}" for f in d["forgetting"]))
        lines.append(f"   average accuracy {d['average_accuracy']:.4f}, mean forgetting {d['forgetting_mean']:.4f}")
        if d["sparsity"] and d["sparsity"][-1]:
            sp = ", ".join(f"layer {r['layer']}: {r['pruned']} pruned / {r['active']} active "
                           f"(mean 1/lambda {r['mean_inv_lambda']:.3g})" for r in d["sparsity"][-1])
            lines.append(f"   final sparsity: {sp}")
    lines.append("")
    lines.append(",".join(CSV_HEADER))
    for r in aggregate_rows(runs):
        lines.append(f"{r['protocol']},{r['method']},{r['buffer']},{r['seed_count']},"
                     f"{r['avg_acc_mean']:.4f},{r['avg_acc_std']:.4f},{r['forgetting_mean']:.4f}")
    return "\n".join(lines)


def report(run_dir):
    runs = load_runs(run_dir)
    print(format_report(runs))
    write_plots(runs, run_dir)
    return runs


def _parse_list(text, cast):
    return [cast(v) for v in text.split(",") if v.strip()]


def build_parser():
    ap = argparse.ArgumentParser(prog="sncl", description="Sparse continual learning experiments")
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in ("run", "sweep"):
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", help="comma-separated seeds overriding the config")
        p.add_argument("--out")
        p.add_argument("--buffer", type=int)
        p.add_argument("--method", help="comma-separated methods overriding the config")
        p.add_argument("--scale", choices=["reduced", "full"])
        p.add_argument("--workers", type=int)
    p = sub.add_parser("report")
    p.add_argument("run_dir")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "report":
            report(args.run_dir)
            return 0
        cfg = load_config(args.config).with_overrides(
            seeds=_parse_list(args.seed, int) if args.seed else None,
            out=args.out,
            buffer=args.buffer,
            methods=_parse_list(args.method, str.lower) if args.method else None,
            scale=args.scale,
            workers=args.workers,
        )
        if args.verb == "run":
            rows = run_experiment(cfg)
            for r in rows:
                print(f"{r['protocol']:12s} {r['method']:6s} buffer={r['buffer']:<5d} "
                      f"avg_acc={100 * r['avg_acc_mean']:.2f} ± {100 * r['avg_acc_std']:.2f} "
                      f"({r['seed_count']} seeds) forgetting={100 * r['forgetting_mean']:.2f}")
            failed = [r for r in rows if r["seed_count"] < len(cfg.seeds)]
            if failed:
                print(f"warning: {len(failed)} method(s) had failed runs", file=sys.stderr)
            return 0
        ranked = run_sweep(cfg)
        best = ranked[0]
        print("best cell: " + ", ".join(f"{k}={v}" for k, v in best.items()))
        return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
