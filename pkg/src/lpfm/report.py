"""Write geometry reports to disk: JSON summary, CSV tables, SVG scatters."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .analysis import GeometryReport
from .errors import DataError

PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]
FORMATS = ("json", "csv", "svg")


def color_for(label: int) -> str:
    return PALETTE[int(label) % len(PALETTE)]


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        wr.writerows(rows)


def _layer_rows(values):
    return [[i, repr(float(v))] for i, v in enumerate(values)]


def _point_rows(coords, labels):
    return [[repr(float(x)), repr(float(y)), int(c)] for (x, y), c in zip(coords, labels)]


def scatter_svg(coords: np.ndarray, labels: np.ndarray, title: str, size: int = 480) -> str:
    """One circle per point, coloured by label."""
    coords = np.asarray(coords, dtype=float)
    pad = 20
    lo = coords.min(axis=0) if len(coords) else np.zeros(2)
    span = np.ptp(coords, axis=0) if len(coords) else np.ones(2)
    span = np.where(span > 0, span, 1.0)
    scale = (size - 2 * pad) / span.max()
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<title>{title}</title>',
           f'<rect width="{size}" height="{size}" fill="white"/>']
    for (x, y), c in zip(coords, labels):
        px = pad + (x - lo[0]) * scale
        py = size - pad - (y - lo[1]) * scale
        out.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="1.5" fill="{color_for(c)}" fill-opacity="0.6"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(run_dir, report: GeometryReport | None, formats=("json", "csv")) -> list[Path]:
    """Write the requested formats into ``run_dir``; returns the files written."""
    if report is None:
        raise DataError("no geometry report: activations were not captured for this run")
    bad = set(formats) - set(FORMATS)
    if bad:
        raise DataError(f"unknown report formats {sorted(bad)}")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        p = run_dir / "report.json"
        p.write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")
        written.append(p)
    if "csv" in formats:
        for name, header, rows in (
            ("cossim.csv", ["layer", "cossim"], _layer_rows(report.cossim)),
            ("snr.csv", ["layer", "snr"], _layer_rows(report.snr)),
            ("pca.csv", ["x", "y", "class"], _point_rows(report.pca_coords, report.pca_labels)),
        ):
            _write_rows(run_dir / name, header, rows)
            written.append(run_dir / name)
        if report.simplex_coords is not None:
            _write_rows(run_dir / "simplex.csv", ["x", "y", "class"],
                        _point_rows(report.simplex_coords, report.simplex_labels))
            written.append(run_dir / "simplex.csv")
    if "svg" in formats:
        p = run_dir / "pca.svg"
        p.write_text(scatter_svg(report.pca_coords, report.pca_labels, "PCA of final-norm tokens"))
        written.append(p)
        if report.simplex_coords is not None:
            p = run_dir / "simplex.svg"
            p.write_text(scatter_svg(report.simplex_coords, report.simplex_labels,
                                     "Tokens projected onto a classifier simplex"))
            written.append(p)
        labels = sorted(set(int(c) for c in report.pca_labels))
        p = run_dir / "legend.csv"
        _write_rows(p, ["class", "color"], [[c, color_for(c)] for c in labels])
        written.append(p)
    return written


def read_points_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    coords = np.array([[float(r[0]), float(r[1])] for r in rows]).reshape(-1, 2)
    return coords, np.array([int(r[2]) for r in rows], dtype=np.int64)


def read_layer_csv(path) -> list[float]:
    with open(path, newline="") as fh:
        return [float(r[1]) for r in list(csv.reader(fh))[1:]]
