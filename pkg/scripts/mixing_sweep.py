#!/usr/bin/env python3
"""Accuracy and collapse metrics across k = 0..h and the depth-mixing layouts.

Uses the directional config with fewer epochs by default so the whole grid
finishes in a few minutes on one core.
"""

import argparse
import copy
from pathlib import Path

from lpfm.harness import MIXINGS, load_config, run_experiment

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "directional.json")
    ap.add_argument("--out", type=Path, default=Path("runs/mixing"))
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args()

    base = load_config(args.config)
    base.train.epochs = args.epochs
    base.train.warmup_epochs = min(base.train.warmup_epochs, max(1, args.epochs // 5))
    base.sweep.seeds = args.seeds
    base.formats = ["json", "csv"]

    results = []
    cfg = copy.deepcopy(base)
    cfg.sweep.laplacian_heads = list(range(cfg.model.heads + 1))
    cfg.out_dir = str(args.out / "uniform")
    for row in run_experiment(cfg).summary:
        results.append((f"uniform k={row['k']}", row))
    for mixing in MIXINGS[1:]:
        cfg = copy.deepcopy(base)
        cfg.sweep.mixing = mixing
        cfg.sweep.laplacian_heads = [0]  # layout fixes the heads, k is unused
        cfg.out_dir = str(args.out / mixing)
        results.append((mixing, run_experiment(cfg).summary[0]))

    print(f"{'layout':30s} {'acc':>7s} {'within_seq':>10s} {'cossim':>7s} {'snr':>7s}")
    for name, r in results:
        print(f"{name:30s} {r['test_acc_mean']:7.4f} {r['within_seq_frac_mean']:10.4f} "
              f"{r['cossim_last_mean']:7.4f} {r['snr_last_mean']:7.3f}")


if __name__ == "__main__":
    main()
