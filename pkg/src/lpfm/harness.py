"""Experiment configuration, sweeps over (k, drop path, seed), and verification.

A sweep writes one subdirectory per cell::

    out/
      k{K}_dp{P}_s{S}/config.json, checkpoint.lpfm, metrics.csv, report.json, *.csv, *.svg
      summary.csv        mean / std over seeds per (k, drop path)
      failures.json      only when a cell raised
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .analysis import GeometryReport, analyze
from .attention import HeadAssignment
from .checkpoint import load_checkpoint, save_checkpoint
from .data import LabeledDataset, SyntheticSpec, gen_synthetic, load_idx_images
from .errors import ConfigurationError, DataError
from .model import ModelConfig
from .report import emit_report
from .train import TrainHyper, train

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MIXINGS = ("uniform", "mix_depth", "interleave_laplacian_first", "interleave_attention_first")


@dataclass
class SweepAxes:
    laplacian_heads: list[int] = field(default_factory=lambda: [0])
    drop_path: list[float] = field(default_factory=lambda: [0.0])
    seeds: list[int] = field(default_factory=lambda: [0])
    mixing: str = "uniform"


@dataclass
class AnalysisOptions:
    pca_classes: int = 10
    seed: int = 0
    split: str = "test"  # "test" | "train"


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainHyper = field(default_factory=TrainHyper)
    data: dict = field(default_factory=lambda: {"kind": "synthetic", **SyntheticSpec().to_dict()})
    sweep: SweepAxes = field(default_factory=SweepAxes)
    analysis: AnalysisOptions = field(default_factory=AnalysisOptions)
    formats: list[str] = field(default_factory=lambda: ["json", "csv"])
    out_dir: str = "runs"
    workers: int = 1
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigurationError(f"config schema {self.schema_version} != {SCHEMA_VERSION}")
        if not self.sweep.seeds:
            raise ConfigurationError("sweep.seeds must be nonempty")
        if self.sweep.mixing not in MIXINGS:
            raise ConfigurationError(f"unknown mixing {self.sweep.mixing!r}; choose from {MIXINGS}")
        for k in self.sweep.laplacian_heads:
            if not 0 <= k <= self.model.heads:
                raise ConfigurationError(f"k={k} outside [0, {self.model.heads}]")
        for p in self.sweep.drop_path:
            if not 0.0 <= p < 1.0:
                raise ConfigurationError(f"drop path {p} outside [0, 1)")
        if self.analysis.split not in ("test", "train"):
            raise ConfigurationError("analysis.split must be 'test' or 'train'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = copy.deepcopy(d)
        cfg = cls(
            model=ModelConfig.from_dict(d.pop("model", {})),
            train=TrainHyper(**d.pop("train", {})),
            sweep=SweepAxes(**d.pop("sweep", {})),
            analysis=AnalysisOptions(**d.pop("analysis", {})),
            **d,
        )
        cfg.validate()
        return cfg


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# Data


def load_datasets(data: dict, num_classes: int) -> tuple[LabeledDataset, LabeledDataset]:
    kind = data.get("kind", "synthetic")
    if kind == "synthetic":
        spec = SyntheticSpec(**{k: v for k, v in data.items() if k != "kind"})
        return gen_synthetic(spec, "train"), gen_synthetic(spec, "test")
    if kind == "npz":
        return LabeledDataset.load(data["train"]), LabeledDataset.load(data["test"])
    if kind == "idx":
        c = data.get("num_classes", num_classes)
        return (load_idx_images(data["train_images"], data["train_labels"], c),
                load_idx_images(data["test_images"], data["test_labels"], c))
    raise ConfigurationError(f"unknown data kind {kind!r}")


# --------------------------------------------------------------------------
# One cell


def assignment_for(cfg: ExperimentConfig, k: int) -> HeadAssignment:
    n, h = cfg.model.depth, cfg.model.heads
    if cfg.sweep.mixing == "uniform":
        return HeadAssignment.uniform(n, h, k)
    if cfg.sweep.mixing == "mix_depth":
        return HeadAssignment.mix_depth(n, h)
    return HeadAssignment.interleave(n, h, laplacian_first=cfg.sweep.mixing == "interleave_laplacian_first")


def cell_name(k: int, drop_path: float, seed: int) -> str:
    return f"k{k}_dp{drop_path:g}_s{seed}"


def cell_config(cfg: ExperimentConfig, k: int, drop_path: float, seed: int) -> ExperimentConfig:
    """The fully resolved single-run config stored alongside each run."""
    one = copy.deepcopy(cfg)
    one.model.head_assignment = assignment_for(cfg, k).to_strings()
    one.model.drop_path = drop_path
    one.model.validate()
    one.sweep = SweepAxes([k], [drop_path], [seed], cfg.sweep.mixing)
    return one


METRIC_FIELDS = ["epoch", "lr", "train_loss", "train_acc", "test_loss", "test_acc"]


def write_metrics_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(METRIC_FIELDS)
        for m in history:
            row = asdict(m)
            wr.writerow([row["epoch"]] + [repr(float(row[f])) for f in METRIC_FIELDS[1:]])


def _analysis_split(cfg: ExperimentConfig, train_set, test_set):
    return test_set if cfg.analysis.split == "test" else train_set


def run_single(cfg: ExperimentConfig, run_dir) -> GeometryReport:
    """Train and analyse the one cell described by a resolved config."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg.sweep.seeds[0]
    train_set, test_set = load_datasets(cfg.data, cfg.model.num_classes)
    save_config(cfg, run_dir / "config.json")
    result = train(cfg.model, train_set, test_set, cfg.train, seed)
    save_checkpoint(run_dir / "checkpoint.lpfm", result.params, cfg.to_dict())
    write_metrics_csv(run_dir / "metrics.csv", result.history)
    report = analyze(cfg.model, result.params, _analysis_split(cfg, train_set, test_set),
                     cfg.analysis.seed, cfg.analysis.pca_classes)
    emit_report(run_dir, report, cfg.formats)
    return report


def _run_cell(args) -> dict:
    cfg, k, dp, seed, out = args
    one = cell_config(cfg, k, dp, seed)
    run_dir = Path(out) / cell_name(k, dp, seed)
    try:
        rep = run_single(one, run_dir)
    except Exception as exc:  # one failed cell must not stop the sweep
        return {"k": k, "drop_path": dp, "seed": seed, "ok": False,
                "error": f"{type(exc).__name__}: {exc}", "trace": traceback.format_exc()}
    return {"k": k, "drop_path": dp, "seed": seed, "ok": True, **cell_metrics(rep)}


def cell_metrics(rep: GeometryReport | dict) -> dict:
    s = rep.summary() if isinstance(rep, GeometryReport) else rep
    return {
        "test_acc": s["test_acc"],
        "within_seq_frac": s["anova"]["fractions"]["within_seq"],
        "between_class_frac": s["anova"]["fractions"]["between_class"],
        "cossim_last": s["cossim"][-1] if s["cossim"] else float("nan"),
        "snr_last": s["snr"][-1] if s["snr"] else float("nan"),
        "equiang_means": s["nc"]["equiangularity_means"],
    }


SUMMARY_METRICS = ["test_acc", "within_seq_frac", "between_class_frac", "cossim_last", "snr_last", "equiang_means"]


def summarize(rows: list[dict]) -> list[dict]:
    """Mean and sample std over seeds for each (k, drop path) cell."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        if r.get("ok", True):
            groups.setdefault((r["k"], r["drop_path"]), []).append(r)
    out = []
    for (k, dp), rs in sorted(groups.items()):
        row = {"k": k, "drop_path": dp, "n": len(rs)}
        for m in SUMMARY_METRICS:
            vals = np.array([r[m] for r in rs], dtype=float)
            row[f"{m}_mean"] = float(vals.mean())
            row[f"{m}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out.append(row)
    return out


def write_summary(path, summary: list[dict]) -> None:
    fields = ["k", "drop_path", "n"] + [f"{m}_{s}" for m in SUMMARY_METRICS for s in ("mean", "std")]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(fields)
        for row in summary:
            wr.writerow([row["k"], repr(float(row["drop_path"])), row["n"]] +
                        [repr(row[f]) for f in fields[3:]])


def write_runs_table(path, rows: list[dict]) -> None:
    fields = ["k", "drop_path", "seed"] + SUMMARY_METRICS
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(fields)
        for r in rows:
            if r.get("ok", True):
                wr.writerow([r["k"], repr(float(r["drop_path"])), r["seed"]] + [repr(float(r[m])) for m in SUMMARY_METRICS])


def deterministic_mode() -> bool:
    return os.environ.get("LPFM_DETERMINISTIC") == "1"


@dataclass
class SweepResult:
    out_dir: Path
    rows: list[dict]
    summary: list[dict]

    @property
    def failed(self) -> list[dict]:
        return [r for r in self.rows if not r["ok"]]


def run_experiment(cfg: ExperimentConfig) -> SweepResult:
    """Every (k, drop path, seed) cell, then the cross-run summary."""
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "experiment.json")
    jobs = [(cfg, k, dp, s, str(out))
            for k in cfg.sweep.laplacian_heads for dp in cfg.sweep.drop_path for s in cfg.sweep.seeds]
    workers = 1 if deterministic_mode() else max(1, cfg.workers)
    if workers == 1 or len(jobs) == 1:
        rows = [_run_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell, jobs))
    for r in rows:
        if not r["ok"]:
            log.error("cell k=%s dp=%s seed=%s failed: %s", r["k"], r["drop_path"], r["seed"], r["error"])
    failed = [r for r in rows if not r["ok"]]
    if failed:
        (out / "failures.json").write_text(json.dumps(failed, indent=2) + "\n")
    summary = summarize(rows)
    write_runs_table(out / "runs.csv", rows)
    write_summary(out / "summary.csv", summary)
    return SweepResult(out, rows, summary)


# --------------------------------------------------------------------------
# Verification


def _max_deviation(a, b, path="") -> float:
    if isinstance(a, dict):
        if not isinstance(b, dict) or set(a) != set(b):
            raise DataError(f"report structure differs at {path or 'root'}")
        return max((_max_deviation(a[k], b[k], f"{path}.{k}") for k in a), default=0.0)
    if isinstance(a, list):
        if not isinstance(b, list) or len(a) != len(b):
            raise DataError(f"report list length differs at {path}")
        return max((_max_deviation(x, y, path) for x, y in zip(a, b)), default=0.0)
    if isinstance(a, str):
        if a != b:
            raise DataError(f"report value differs at {path}")
        return 0.0
    x, y = float(a), float(b)
    if math.isnan(x) and math.isnan(y):
        return 0.0
    return abs(x - y) / max(1.0, abs(x), abs(y))


def reanalyze(run_dir) -> tuple[ExperimentConfig, GeometryReport]:
    run_dir = Path(run_dir)
    cfg = load_config(run_dir / "config.json")
    params = load_checkpoint(run_dir / "checkpoint.lpfm", cfg.to_dict())
    train_set, test_set = load_datasets(cfg.data, cfg.model.num_classes)
    rep = analyze(cfg.model, params, _analysis_split(cfg, train_set, test_set),
                  cfg.analysis.seed, cfg.analysis.pca_classes)
    return cfg, rep


def verify_run(run_dir, tol: float = 1e-9) -> float:
    """Recompute the report from checkpoint + data + config; raise if it drifts past ``tol``."""
    run_dir = Path(run_dir)
    path = run_dir / "report.json"
    if not path.exists():
        raise DataError(f"{path} missing; run with the json format")
    stored = json.loads(path.read_text())
    _, rep = reanalyze(run_dir)
    fresh = json.loads(json.dumps(rep.summary()))
    dev = _max_deviation(stored, fresh)
    if dev > tol:
        raise DataError(f"recomputed report deviates by {dev:.3e} (> {tol:g})")
    return dev
