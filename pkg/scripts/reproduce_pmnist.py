"""Method ordering on reduced P-MNIST (5 tasks x 2000 samples, buffer 200, 5 seeds).

    python scripts/reproduce_pmnist.py [--buffer 500] [--workers 4]
"""

import argparse

from sncl.cli import format_report, load_runs, run_experiment
from sncl.config import load_config

ap = argparse.ArgumentParser()
ap.add_argument("--config", default="configs/pmnist_table1.cfg")
ap.add_argument("--buffer", type=int)
ap.add_argument("--workers", type=int)
ap.add_argument("--out")
args = ap.parse_args()

cfg = load_config(args.config).with_overrides(buffer=args.buffer, workers=args.workers, out=args.out)
rows = run_experiment(cfg)
print(format_report(load_runs(cfg.out)).split("\n\n")[-1])
best = max(rows, key=lambda r: r["avg_acc_mean"])
print(f"\nbest method: {best['method']} ({100 * best['avg_acc_mean']:.2f})")
