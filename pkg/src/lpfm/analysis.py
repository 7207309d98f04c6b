"""Run a trained model over held-out data and assemble its geometry report."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import cross_entropy
from .data import LabeledDataset
from .geometry import (LabeledTokenSet, anova_decompose, cossim_per_layer, ntc_report,
                       pca_project, simplex_project, snr_per_layer)
from .model import ActivationCapture, ModelConfig, classifier_matrix, model_forward
from .numeric import RngState


@dataclass
class GeometryReport:
    cossim: list[float]
    snr: list[float]
    anova: dict
    anova_unweighted: dict
    nc: dict
    ntc: dict
    test_loss: float
    test_acc: float
    pca_coords: np.ndarray = field(repr=False)
    pca_labels: np.ndarray = field(repr=False)
    pca_classes: list[int] = field(default_factory=list)
    simplex_coords: np.ndarray | None = field(default=None, repr=False)
    simplex_labels: np.ndarray | None = field(default=None, repr=False)
    simplex_classes: list[int] = field(default_factory=list)

    def summary(self) -> dict:
        """The JSON-serialisable part (projections are written as CSV)."""
        return {
            "cossim": list(self.cossim),
            "snr": list(self.snr),
            "anova": self.anova,
            "anova_unweighted": self.anova_unweighted,
            "nc": self.nc,
            "ntc": self.ntc,
            "test_loss": self.test_loss,
            "test_acc": self.test_acc,
            "pca_classes": list(self.pca_classes),
            "simplex_classes": list(self.simplex_classes),
        }


def capture_activations(cfg: ModelConfig, params: dict, data: LabeledDataset):
    logits, cap = model_forward(cfg, params, data.inputs, capture=True)
    return logits.data, cap


def _pick_classes(num_classes: int, k: int, rng: RngState) -> np.ndarray:
    if num_classes <= k:
        return np.arange(num_classes)
    return np.sort(rng.generator().choice(num_classes, size=k, replace=False))


def build_report(cfg: ModelConfig, params: dict, data: LabeledDataset, logits: np.ndarray,
                 cap: ActivationCapture, rng: RngState, pca_classes: int = 10) -> GeometryReport:
    """Per-layer CosSim (block outputs) and SNR (pre-MLP norm); ANOVA, NC
    metrics and projections on the final norm output."""
    final = LabeledTokenSet(cap.final_norm, data.labels, cfg.num_classes)
    w = classifier_matrix(params)
    anova = anova_decompose(final, "weighted")
    anova_u = anova_decompose(final, "unweighted")
    ntc = ntc_report(final, w, cap.features, logits)

    chosen = _pick_classes(cfg.num_classes, pca_classes, rng.spawn("pca"))
    sel = np.isin(data.labels, chosen)
    t = cap.final_norm.shape[1]
    pca = pca_project(cap.final_norm[sel])
    pca_labels = np.repeat(data.labels[sel], t)

    simplex = simplex_labels = None
    simplex_classes: list[int] = []
    if cfg.num_classes >= 3:
        pts, picked = simplex_project(cap.final_norm, w, rng.spawn("simplex"))
        keep = np.repeat(np.isin(data.labels, picked), t)
        simplex = pts[keep]
        simplex_labels = np.repeat(data.labels, t)[keep]
        simplex_classes = [int(c) for c in picked]

    return GeometryReport(
        cossim=cossim_per_layer(cap.block_outputs),
        snr=snr_per_layer(cap.pre_mlp_ln),
        anova=anova.to_dict(),
        anova_unweighted=anova_u.to_dict(),
        nc=ntc.nc.to_dict(),
        ntc={"within_seq_var": ntc.within_seq_var, "within_class_var": ntc.within_class_var,
             "between_class_fraction": ntc.between_class_fraction},
        test_loss=float(cross_entropy(logits, data.labels).data),
        test_acc=float(np.mean(np.argmax(logits, axis=1) == data.labels)),
        pca_coords=pca,
        pca_labels=pca_labels,
        pca_classes=[int(c) for c in chosen],
        simplex_coords=simplex,
        simplex_labels=simplex_labels,
        simplex_classes=simplex_classes,
    )


def analyze(cfg: ModelConfig, params: dict, data: LabeledDataset, seed: int = 0,
            pca_classes: int = 10) -> GeometryReport:
    logits, cap = capture_activations(cfg, params, data)
    return build_report(cfg, params, data, logits, cap, RngState(seed).spawn("analysis"), pca_classes)
