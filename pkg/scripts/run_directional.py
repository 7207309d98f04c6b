#!/usr/bin/env python3
"""Train k=0 and k=h models on the synthetic benchmark and compare their token geometry.

    python3 scripts/run_directional.py --out runs/directional
"""

import argparse
import os
from pathlib import Path

from lpfm.harness import load_config, run_experiment

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "directional.json")
    ap.add_argument("--out", type=Path)
    ap.add_argument("--workers", type=int)
    args = ap.parse_args()

    cfg = load_config(args.config)
    if args.out:
        cfg.out_dir = str(args.out)
    if args.workers:
        cfg.workers = args.workers
    res = run_experiment(cfg)

    rows = {r["k"]: r for r in res.summary}
    base, lap = rows[min(rows)], rows[max(rows)]
    print(f"{'metric':22s} {'k=' + str(base['k']):>16s} {'k=' + str(lap['k']):>16s}")
    for m in ("test_acc", "within_seq_frac", "between_class_frac", "cossim_last", "snr_last", "equiang_means"):
        print(f"{m:22s} {base[m + '_mean']:9.4f}±{base[m + '_std']:.4f} {lap[m + '_mean']:9.4f}±{lap[m + '_std']:.4f}")
    print(f"runs in {res.out_dir}" + (" (deterministic)" if os.environ.get("LPFM_DETERMINISTIC") == "1" else ""))
    return 1 if res.failed else 0


if __name__ == "__main__":
    raise SystemExit(main())
