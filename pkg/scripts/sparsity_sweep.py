"""Pruned-gate fraction and accuracy as the VBS weight eta grows."""

import argparse
import json
from pathlib import Path

import numpy as np

from sncl.cli import run_experiment
from sncl.config import load_config
from sncl.plots import write_line_chart

ap = argparse.ArgumentParser()
ap.add_argument("--config", default="configs/sparsity_pmnist.cfg")
ap.add_argument("--etas", default="0,1e-4,1e-3,1e-2")
args = ap.parse_args()

base = load_config(args.config)
etas = [float(e) for e in args.etas.split(",")]
fractions, accs = [], []
for eta in etas:
    cfg = base.with_overrides(eta=eta, out=f"{base.out}/eta_{eta:g}")
    row, = run_experiment(cfg)
    runs = [json.loads(p.read_text()) for p in Path(cfg.out).rglob("metrics_*.json")]
    fractions.append(float(np.mean([d["final_pruned_fraction"] for d in runs])))
    accs.append(row["avg_acc_mean"])
    print(f"eta {eta:<8g} pruned {fractions[-1]:.4f}  acc {100 * accs[-1]:.2f}")

xs = list(range(len(etas)))
write_line_chart(Path(base.out) / "sparsity_vs_eta.svg", "Pruned fraction by eta (index into " + args.etas + ")",
                 "eta index", "fraction pruned", [("pruned", xs, fractions)])
