"""Command line entry point: ``lpfm <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import SyntheticSpec, gen_synthetic
from .diffusion import diffuse, equivalence_check, uniform_mixture, write_trajectory_csv
from .errors import LpfmError
from .gradcheck import grad_check_model
from .harness import (ExperimentConfig, cell_config, load_config, reanalyze, run_experiment,
                      run_single, verify_run)
from .numeric import RngState
from .report import emit_report


def _int_list(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v.strip()]


def _float_list(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="override the seed (sweeps: run only this seed)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--workers", type=int, help="parallel sweep cells")
    p.add_argument("--format", action="append", choices=["json", "csv", "svg"], dest="formats",
                   help="report format (repeatable)")
    p.add_argument("--laplacian-heads", type=_int_list, help="comma-separated k values")
    p.add_argument("--drop-path", type=_float_list, help="comma-separated drop path rates")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.sweep.seeds = [args.seed]
    if args.out is not None:
        cfg.out_dir = str(args.out)
    if args.workers is not None:
        cfg.workers = args.workers
    if args.formats:
        cfg.formats = list(dict.fromkeys(args.formats))
    if args.laplacian_heads is not None:
        cfg.sweep.laplacian_heads = args.laplacian_heads
    if args.drop_path is not None:
        cfg.sweep.drop_path = args.drop_path
    cfg.validate()
    return cfg


def cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    spec = SyntheticSpec(**{k: v for k, v in cfg.data.items() if k != "kind"})
    if args.seed is not None:
        spec.seed = args.seed
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split in ("train", "test"):
        gen_synthetic(spec, split).save(out / f"{split}.npz")
    (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {out}/train.npz and {out}/test.npz")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    k = cfg.sweep.laplacian_heads[0]
    dp = cfg.sweep.drop_path[0]
    seed = cfg.sweep.seeds[0]
    rep = run_single(cell_config(cfg, k, dp, seed), cfg.out_dir)
    print(f"test_acc={rep.test_acc:.4f} within_seq_frac={rep.anova['fractions']['within_seq']:.4f}")
    return 0


def cmd_analyze(args) -> int:
    run = args.run or args.out
    cfg, rep = reanalyze(run)
    formats = args.formats or cfg.formats
    for p in emit_report(run, rep, formats):
        print(p)
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    res = run_experiment(cfg)
    for row in res.summary:
        print(f"k={row['k']} dp={row['drop_path']:g} n={row['n']} "
              f"acc={100 * row['test_acc_mean']:.2f}±{100 * row['test_acc_std']:.2f}")
    if res.failed:
        print(f"{len(res.failed)} run(s) failed; see {res.out_dir}/failures.json", file=sys.stderr)
        return 1
    return 0


def cmd_diffuse(args) -> int:
    seed = args.seed or 0
    dev = equivalence_check(seed=seed)
    print(f"equivalence max deviation: {dev:.3e}")
    g = RngState(seed).spawn("diffuse")
    x = g.spawn("x").generator().normal(size=(args.seq_len, args.dim))
    if args.attention:
        w = g.spawn("w").generator().normal(size=(2, args.dim, args.dim))
        _, traj = diffuse(x, args.steps, args.dt, w_q=w[0], w_k=w[1], recompute=not args.frozen)
    else:
        p = uniform_mixture(args.seq_len, 0.5, g.spawn("p"))
        _, traj = diffuse(x, args.steps, args.dt, p=p)
    out = Path(args.out or "diffusion")
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(out / "trajectory.csv", traj)
    print(f"final row spread {traj[-1].row_spread:.3e}; wrote {out}/trajectory.csv")
    return 0


def cmd_grad_check(args) -> int:
    errs = grad_check_model(seed=args.seed or 0)
    worst = max(errs.values())
    for name, e in errs.items():
        print(f"{name:24s} {e:.2e}")
    print(f"max relative error {worst:.2e}")
    return 0 if worst <= 1e-4 else 1


def cmd_verify(args) -> int:
    run = args.run or args.out
    dev = verify_run(run)
    print(f"report reproduced (max deviation {dev:.2e})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="lpfm", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write synthetic train/test sets").set_defaults(fn=cmd_gen_data)
    sub.add_parser("train", parents=[common], help="train and analyse one model").set_defaults(fn=cmd_train)
    for name, fn, hlp in (("analyze", cmd_analyze, "recompute and emit a run's report"),
                          ("verify", cmd_verify, "check a stored report against its checkpoint")):
        p = sub.add_parser(name, parents=[common], help=hlp)
        p.add_argument("run", nargs="?", type=Path, help="run directory")
        p.set_defaults(fn=fn)
    sub.add_parser("sweep", parents=[common], help="run the configured k/drop-path/seed grid").set_defaults(fn=cmd_sweep)
    p = sub.add_parser("diffuse", parents=[common], help="heat-diffusion trajectory and equivalence check")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--seq-len", type=int, default=8)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--attention", action="store_true", help="take P from random attention weights")
    p.add_argument("--frozen", action="store_true", help="keep the initial P instead of recomputing")
    p.set_defaults(fn=cmd_diffuse)
    sub.add_parser("grad-check", parents=[common], help="finite-difference gradient check").set_defaults(fn=cmd_grad_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except LpfmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
