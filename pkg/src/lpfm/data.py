"""Labelled datasets: the synthetic token benchmark and IDX image files."""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError
from .numeric import RngState


@dataclass
class LabeledDataset:
    inputs: np.ndarray  # (N, T, F) token sequences or (N, H, W, ch) images
    labels: np.ndarray  # (N,) ints in [0, num_classes)
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise DataError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        bad = np.flatnonzero((self.labels < 0) | (self.labels >= self.num_classes))
        if bad.size:
            raise DataError(f"label {self.labels[bad[0]]} at index {bad[0]} outside [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def save(self, path) -> None:
        np.savez(path, inputs=self.inputs, labels=self.labels, num_classes=self.num_classes)

    @classmethod
    def load(cls, path) -> "LabeledDataset":
        with np.load(path) as z:
            return cls(z["inputs"], z["labels"], int(z["num_classes"]))


@dataclass
class SyntheticSpec:
    num_classes: int = 4
    per_class: int = 128
    seq_len: int = 8
    dim: int = 32
    center_scale: float = 1.0
    class_noise: float = 0.5
    seq_noise: float = 1.0
    seed: int = 0
    test_per_class: int | None = None

    def validate(self) -> None:
        for name in ("num_classes", "per_class", "seq_len", "dim"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be at least 1")
        if min(self.center_scale, self.class_noise, self.seq_noise) < 0:
            raise DataError("scales must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def class_centers(spec: SyntheticSpec) -> np.ndarray:
    """Class centres drawn uniformly on the sphere of radius ``center_scale``."""
    g = RngState(spec.seed).spawn("centers").generator()
    c = g.normal(size=(spec.num_classes, spec.dim))
    c /= np.linalg.norm(c, axis=1, keepdims=True)
    return spec.center_scale * c


def gen_synthetic(spec: SyntheticSpec, split: str = "train") -> LabeledDataset:
    """Tokens = class centre + per-instance offset + per-token offset.

    Offsets are isotropic Gaussians with per-coordinate std ``class_noise``
    and ``seq_noise``. Splits share centres and differ in the instance draws.
    Samples are ordered by class.
    """
    spec.validate()
    per = spec.per_class if split == "train" else (spec.test_per_class or spec.per_class)
    g = RngState(spec.seed).spawn(f"split-{split}").generator()
    centers = class_centers(spec)
    labels = np.repeat(np.arange(spec.num_classes), per)
    inst = centers[labels] + spec.class_noise * g.normal(size=(len(labels), spec.dim))
    tokens = inst[:, None, :] + spec.seq_noise * g.normal(size=(len(labels), spec.seq_len, spec.dim))
    return LabeledDataset(tokens, labels, spec.num_classes)


def gen_centered_pair(u: np.ndarray, per_class: int, seq_len: int) -> LabeledDataset:
    """Two noiseless classes at +u and -u."""
    u = np.asarray(u, dtype=float)
    tokens = np.concatenate([np.broadcast_to(u, (per_class, seq_len, u.size)),
                             np.broadcast_to(-u, (per_class, seq_len, u.size))])
    return LabeledDataset(tokens.copy(), np.repeat([0, 1], per_class), 2)


# --------------------------------------------------------------------------
# IDX (MNIST-style) files

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


def _read_idx(raw: bytes, magic: int, ndim: int) -> tuple[tuple[int, ...], np.ndarray]:
    if len(raw) < 4:
        raise FormatError("file too short for IDX magic", len(raw))
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise FormatError(f"bad magic 0x{got:08x}, expected 0x{magic:08x}", 0)
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError("truncated IDX header", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) < header + count:
        raise FormatError(f"truncated IDX payload, need {header + count} bytes", len(raw))
    return dims, np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx_images(images_path, labels_path, num_classes: int = 10) -> LabeledDataset:
    """Unsigned-byte IDX image + label files -> images in [0, 1], shape (N, H, W, 1)."""
    _, images = _read_idx(Path(images_path).read_bytes(), IDX_IMAGES, 3)
    _, labels = _read_idx(Path(labels_path).read_bytes(), IDX_LABELS, 1)
    if len(images) != len(labels):
        raise DataError(f"{len(images)} images but {len(labels)} labels")
    return LabeledDataset(images[..., None].astype(float) / 255.0, labels.astype(np.int64), num_classes)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES, n, h, w) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS, n) + labels.tobytes())
