"""General continual learning on the boundary-free MNIST-360-style stream.

Prints the accuracy curve of every method averaged over seeds.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from sncl.cli import run_experiment
from sncl.config import load_config

ap = argparse.ArgumentParser()
ap.add_argument("--config", default="configs/mnist360.cfg")
ap.add_argument("--workers", type=int)
args = ap.parse_args()

cfg = load_config(args.config).with_overrides(workers=args.workers)
for r in run_experiment(cfg):
    curves = [json.loads(p.read_text()) for p in sorted((Path(cfg.out) / r["method"]).glob("metrics_*.json"))]
    steps = curves[0]["eval_steps"]
    acc = np.mean([[row[0] for row in d["accuracy"]] for d in curves], axis=0)
    print(f"{r['method']:5s} final {100 * r['avg_acc_mean']:.2f} ± {100 * r['avg_acc_std']:.2f}")
    print("      " + " ".join(f"{s}:{100 * a:.0f}" for s, a in zip(steps, acc)))
