"""Token-geometry diagnostics: means, variance decomposition, CosSim, SNR,
Neural-Collapse metrics and the two planar projections.

A labelled token set is an array ``X`` of shape (N, T, d) with integer
labels of shape (N,). All functions are pure.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, DataError, NumericWarning
from .numeric import RngState, thin_svd

COS_EPS = 1e-12
SNR_EPS = 1e-12
SNR_CAP = 1e12


@dataclass
class LabeledTokenSet:
    tokens: np.ndarray  # (N, T, d)
    labels: np.ndarray  # (N,)
    num_classes: int

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.tokens.ndim != 3 or len(self.tokens) == 0:
            raise DataError("tokens must be a non-empty (N, T, d) array")
        if len(self.labels) != len(self.tokens):
            raise DataError("one label per sequence required")
        if not np.all(np.isfinite(self.tokens)):
            raise DataError("non-finite token embeddings")

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def require_all_classes(self) -> None:
        empty = np.flatnonzero(self.counts() == 0)
        if empty.size:
            raise DataError(f"class {int(empty[0])} has no sequences")


def token_means(s: LabeledTokenSet):
    """(sequence means (N, d), class means (C, d), global mean (d,)).

    The global mean is the unweighted average of the class means.
    """
    s.require_all_classes()
    seq = s.tokens.mean(axis=1)
    cls = np.stack([seq[s.labels == c].mean(axis=0) for c in range(s.num_classes)])
    return seq, cls, cls.mean(axis=0)


@dataclass
class AnovaDecomposition:
    within_seq: float
    within_class: float
    between_class: float
    total: float
    weighting: str

    @property
    def fractions(self) -> dict:
        if self.total == 0.0:
            return {"within_seq": 0.0, "within_class": 0.0, "between_class": 0.0}
        return {"within_seq": self.within_seq / self.total,
                "within_class": self.within_class / self.total,
                "between_class": self.between_class / self.total}

    def residual(self) -> float:
        return self.total - (self.within_seq + self.within_class + self.between_class)

    def to_dict(self) -> dict:
        return {**asdict(self), "fractions": self.fractions}


def anova_decompose(s: LabeledTokenSet, weighting: str = "weighted") -> AnovaDecomposition:
    """Split total token variance into between-class, within-class and within-sequence parts.

    ``"unweighted"`` averages class statistics uniformly over classes;
    ``"weighted"`` weights each class by its sequence count, which makes the
    three parts sum to the total for any class counts. The two coincide for
    balanced classes.
    """
    if weighting not in ("weighted", "unweighted"):
        raise ConfigurationError(f"unknown weighting {weighting!r}")
    seq, cls, mu_g = token_means(s)
    counts = s.counts()
    if weighting == "weighted":
        mu_g = (counts[:, None] * cls).sum(axis=0) / counts.sum()
        class_w = counts / counts.sum()
    else:
        class_w = np.full(s.num_classes, 1.0 / s.num_classes)
    within_seq = float(np.mean(np.sum((s.tokens - seq[:, None, :]) ** 2, axis=-1)))
    within_class = float(np.mean(np.sum((seq - cls[s.labels]) ** 2, axis=-1)))
    between = float(np.sum(class_w * np.sum((cls - mu_g) ** 2, axis=-1)))
    total = float(np.mean(np.sum((s.tokens - mu_g) ** 2, axis=-1)))
    return AnovaDecomposition(within_seq, within_class, between, total, weighting)


def cossim(x: np.ndarray) -> float:
    """Mean over sequences of the mean cosine over ordered token pairs i != j."""
    x = np.asarray(x, dtype=float)
    b, t, _ = x.shape
    if t < 2:
        raise DataError("CosSim needs at least two tokens per sequence")
    norms = np.linalg.norm(x, axis=-1)
    gram = x @ np.swapaxes(x, 1, 2)
    cos = gram / np.maximum(norms[:, :, None] * norms[:, None, :], COS_EPS)
    off = cos.sum(axis=(1, 2)) - np.trace(cos, axis1=1, axis2=2)
    return float(np.clip(off / (t * (t - 1)), -1.0, 1.0).mean())


def cossim_per_layer(block_outputs) -> list[float]:
    return [cossim(x) for x in block_outputs]


def snr(x: np.ndarray) -> float:
    """Mean over sequences of |mean token| / token std; collapsed sequences hit SNR_CAP."""
    x = np.asarray(x, dtype=float)
    if x.shape[1] < 2:
        raise DataError("SNR needs at least two tokens per sequence")
    m = x.mean(axis=1)
    std = np.sqrt(np.mean(np.sum((x - m[:, None, :]) ** 2, axis=-1), axis=1))
    ratio = np.linalg.norm(m, axis=-1) / (std + SNR_EPS)
    return float(np.minimum(ratio, SNR_CAP).mean())


def snr_per_layer(pre_mlp_outputs) -> list[float]:
    return [snr(x) for x in pre_mlp_outputs]


def pca_project(x: np.ndarray) -> np.ndarray:
    """Centre all B*T tokens and project onto the top two principal directions."""
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, x.shape[-1])
    if flat.shape[1] < 2:
        raise ConfigurationError("PCA projection to 2-D needs d >= 2")
    if flat.shape[0] < 2:
        raise DataError("PCA needs at least two tokens")
    centered = flat - flat.mean(axis=0)
    _, _, vt = thin_svd(centered)
    return centered @ vt[:2].T


# --------------------------------------------------------------------------
# Neural-Collapse metrics


@dataclass
class NcMetrics:
    equinorm_means: float
    equinorm_weights: float
    equiangularity_means: float
    equiangularity_weights: float
    self_duality: float
    ncc_mismatch: float

    def to_dict(self) -> dict:
        return asdict(self)


def _equinorm(vectors: np.ndarray) -> float:
    norms = np.linalg.norm(vectors, axis=1)
    return float(norms.std() / norms.mean())


def _equiangularity(vectors: np.ndarray) -> float:
    c = len(vectors)
    unit = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    g = unit @ unit.T
    mask = ~np.eye(c, dtype=bool)
    return float(np.abs(g[mask] + 1.0 / (c - 1)).sum() / (c * (c - 1)))


def nc_metrics(means: np.ndarray, w: np.ndarray, features: np.ndarray, logits: np.ndarray,
               global_mean: np.ndarray | None = None) -> NcMetrics:
    """NC2-NC4 scalars.

    ``means`` is d x C (one class mean per column), ``w`` is C x d.
    Equinorm and equiangularity of the means are measured on the means
    centred by ``global_mean`` (default: their average); for the classifier
    on the raw rows of ``w``. ``features`` (N, d) and ``logits`` (N, C) feed
    the nearest-class-centre agreement.
    """
    means = np.asarray(means, dtype=float)
    w = np.asarray(w, dtype=float)
    d, c = means.shape
    if c < 2:
        raise DataError("NC metrics need at least two classes")
    if w.shape != (c, d):
        raise DataError(f"classifier shape {w.shape} != ({c}, {d})")
    mu_g = means.mean(axis=1) if global_mean is None else np.asarray(global_mean, dtype=float)
    centered = means - mu_g[:, None]
    if np.any(np.linalg.norm(centered, axis=0) == 0.0):
        raise DataError("a centred class mean has zero norm")
    if np.any(np.linalg.norm(w, axis=1) == 0.0):
        raise DataError("a classifier row has zero norm")

    diff = w.T / np.linalg.norm(w) - centered / np.linalg.norm(centered)
    self_duality = float(np.sum(diff * diff))

    features = np.asarray(features, dtype=float)
    dist = np.sum((features[:, None, :] - means.T[None, :, :]) ** 2, axis=-1)
    ncc = np.argmin(dist, axis=1)
    pred = np.argmax(np.asarray(logits), axis=1)
    mismatch = float(np.mean(ncc != pred))

    return NcMetrics(
        equinorm_means=_equinorm(centered.T),
        equinorm_weights=_equinorm(w),
        equiangularity_means=_equiangularity(centered.T),
        equiangularity_weights=_equiangularity(w),
        self_duality=self_duality,
        ncc_mismatch=mismatch,
    )


# --------------------------------------------------------------------------
# Projection onto a planar simplex


SIMPLEX_A = np.sqrt(2.0) * np.array([[0.5, -0.5, 0.0], [0.0, 0.0, np.sqrt(3.0) / 2.0]]) @ (
    np.eye(3) - np.ones((3, 3)) / 3.0)


def simplex_project(x: np.ndarray, w: np.ndarray, rng: RngState,
                    classes: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Project tokens onto three sampled classifier rows, then onto a triangle.

    Returns (points (B*T, 2), the three sampled class indices). Rank-deficient
    samples are redrawn once with a warning, then rejected.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.shape[0] < 3:
        raise ConfigurationError("simplex projection needs at least 3 classes")
    flat = x.reshape(-1, x.shape[-1])
    g = rng.generator()
    for attempt in range(2):
        picked = np.asarray(classes) if classes is not None and attempt == 0 else \
            np.sort(g.choice(w.shape[0], size=3, replace=False))
        rows = w[picked]
        nrm = np.linalg.norm(rows, axis=1, keepdims=True)
        if np.all(nrm > 0):
            u, s, vt = thin_svd(rows / nrm)
            if s[-1] > 1e-10 * s[0]:
                return (SIMPLEX_A @ u @ vt @ flat.T).T, picked
        if attempt == 0:
            warnings.warn("degenerate classifier sample for simplex projection; resampling", NumericWarning)
    raise DataError("sampled classifier rows are rank deficient")


# --------------------------------------------------------------------------
# Neural Token Collapse summary


@dataclass
class NtcSummary:
    within_seq_var: float
    within_class_var: float
    between_class_fraction: float
    nc: NcMetrics

    def to_dict(self) -> dict:
        return {"within_seq_var": self.within_seq_var, "within_class_var": self.within_class_var,
                "between_class_fraction": self.between_class_fraction, "nc": self.nc.to_dict()}


def class_mean_matrix(s: LabeledTokenSet) -> np.ndarray:
    """d x C matrix of class token means."""
    return token_means(s)[1].T


def ntc_report(s: LabeledTokenSet, w: np.ndarray, features: np.ndarray, logits: np.ndarray,
               weighting: str = "weighted") -> NtcSummary:
    """Residuals of within-sequence and within-class collapse plus NC2-NC4."""
    anova = anova_decompose(s, weighting)
    seq, cls, mu_g = token_means(s)
    if weighting == "weighted":
        counts = s.counts()
        mu_g = (counts[:, None] * cls).sum(axis=0) / counts.sum()
    nc = nc_metrics(cls.T, w, features, logits, global_mean=mu_g)
    return NtcSummary(anova.within_seq, anova.within_class, anova.fractions["between_class"], nc)
