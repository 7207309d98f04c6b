"""ViT-style encoder classifier built from :mod:`lpfm.attention` blocks.

tokens -> n encoder blocks -> final LayerNorm -> mean over tokens -> linear.
There is no class token: pooling over all tokens keeps the classifier input
equal to the token-level class means that the geometry metrics analyse.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import HeadAssignment, HeadKind, encoder_block
from .autodiff import Tensor, as_tensor
from .errors import ConfigurationError
from .numeric import RngState, trunc_normal_init

INIT_STD = 0.02


@dataclass
class ModelConfig:
    depth: int = 4
    heads: int = 4
    dim: int = 32
    num_classes: int = 4
    head_dim: int | None = None
    mlp_ratio: int = 4
    input_kind: str = "tokens"  # "tokens" | "image"
    input_dim: int = 32
    seq_len: int = 8
    image_size: int = 32
    patch_size: int = 4
    channels: int = 1
    drop_path: float = 0.0
    qk_norm: bool = False
    head_assignment: list[str] = field(default_factory=list)
    dtype: str = "float64"

    def __post_init__(self):
        if not self.head_assignment:
            self.head_assignment = HeadAssignment.uniform(self.depth, self.heads, 0).to_strings()
        self.validate()

    @property
    def d_k(self) -> int:
        return self.head_dim if self.head_dim is not None else self.dim // self.heads

    @property
    def assignment(self) -> HeadAssignment:
        return HeadAssignment.from_strings(self.head_assignment)

    @property
    def num_tokens(self) -> int:
        if self.input_kind == "image":
            return (self.image_size // self.patch_size) ** 2
        return self.seq_len

    @property
    def token_features(self) -> int:
        if self.input_kind == "image":
            return self.patch_size * self.patch_size * self.channels
        return self.input_dim

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be at least 2")
        if self.input_kind not in ("tokens", "image"):
            raise ConfigurationError(f"unknown input_kind {self.input_kind!r}")
        if self.input_kind == "image" and self.image_size % self.patch_size:
            raise ConfigurationError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.head_dim is None and self.dim % self.heads:
            raise ConfigurationError(f"dim {self.dim} not divisible by heads {self.heads}")
        if not 0.0 <= self.drop_path < 1.0:
            raise ConfigurationError("drop_path must lie in [0, 1)")
        if self.dtype not in ("float64", "float32"):
            raise ConfigurationError(f"unsupported dtype {self.dtype!r}")
        a = self.assignment
        if a.depth != self.depth or (self.depth and a.heads != self.heads):
            raise ConfigurationError(
                f"head_assignment is {a.depth}x{a.heads}, model is {self.depth}x{self.heads}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def init_params(cfg: ModelConfig, rng: RngState) -> dict[str, np.ndarray]:
    d, h, dk, c = cfg.dim, cfg.heads, cfg.d_k, cfg.num_classes
    hidden = cfg.mlp_ratio * d
    dtype = np.dtype(cfg.dtype)
    draws = iter(range(1 << 30))

    def tn(*shape):
        return trunc_normal_init(shape, INIT_STD, rng.spawn(next(draws))).astype(dtype)

    p = {
        "embed.w": tn(cfg.token_features, d),
        "pos": tn(cfg.num_tokens, d),
    }
    for i in range(cfg.depth):
        pre = f"blocks.{i}."
        p[pre + "ln1_g"] = np.ones(d, dtype)
        p[pre + "ln1_b"] = np.zeros(d, dtype)
        p[pre + "w_q"] = tn(h, d, dk)
        p[pre + "w_k"] = tn(h, d, dk)
        p[pre + "w_v"] = tn(h, d, dk)
        p[pre + "w_o"] = tn(h * dk, d)
        if cfg.qk_norm:
            p[pre + "q_gain"] = np.ones((h, 1, dk), dtype)
            p[pre + "k_gain"] = np.ones((h, 1, dk), dtype)
        p[pre + "ln2_g"] = np.ones(d, dtype)
        p[pre + "ln2_b"] = np.zeros(d, dtype)
        p[pre + "mlp_w1"] = tn(d, hidden)
        p[pre + "mlp_b1"] = np.zeros(hidden, dtype)
        p[pre + "mlp_w2"] = tn(hidden, d)
        p[pre + "mlp_b2"] = np.zeros(d, dtype)
    p["norm.g"] = np.ones(d, dtype)
    p["norm.b"] = np.zeros(d, dtype)
    p["head.w"] = tn(d, c)
    p["head.b"] = np.zeros(c, dtype)
    return p


def block_params(params: dict, i: int) -> dict:
    pre = f"blocks.{i}."
    return {k[len(pre):]: v for k, v in params.items() if k.startswith(pre)}


def patchify(images: np.ndarray, patch_size: int) -> np.ndarray:
    """(B, H, W, ch) -> (B, T, patch*patch*ch), patches in row-major order."""
    images = np.asarray(images, dtype=float)
    if images.ndim == 3:
        images = images[None]
    b, hgt, wid, ch = images.shape
    if hgt % patch_size or wid % patch_size:
        raise ConfigurationError(f"image {hgt}x{wid} not divisible by patch size {patch_size}")
    gh, gw = hgt // patch_size, wid // patch_size
    x = images.reshape(b, gh, patch_size, gw, patch_size, ch).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, gh * gw, patch_size * patch_size * ch)


def tokenize_image(image, patch_size: int, embed, pos) -> Tensor:
    """Flattened patches times ``embed`` plus the positional vectors."""
    single = np.ndim(image) == 3
    out = as_tensor(patchify(image, patch_size)) @ embed + pos
    return out.reshape(out.shape[1:]) if single else out


@dataclass
class ActivationCapture:
    block_outputs: list[np.ndarray] = field(default_factory=list)
    pre_mlp_ln: list[np.ndarray] = field(default_factory=list)
    final_norm: np.ndarray | None = None
    features: np.ndarray | None = None
    head_kinds: list[tuple[HeadKind, ...]] = field(default_factory=list)


def embed_tokens(cfg: ModelConfig, params: dict, batch) -> Tensor:
    if cfg.input_kind == "image":
        return tokenize_image(batch, cfg.patch_size, params["embed.w"], params["pos"])
    return as_tensor(np.asarray(batch)) @ params["embed.w"] + params["pos"]


def model_forward(cfg: ModelConfig, params: dict, batch, training: bool = False,
                  rng: RngState | None = None, capture: bool = False):
    """Logits (B, C) and, when ``capture`` is set, the per-layer activations."""
    params = {k: as_tensor(v) for k, v in params.items()}
    cap = ActivationCapture() if capture else None
    trace = cap.head_kinds if cap is not None else None
    x = embed_tokens(cfg, params, batch)
    for i, kinds in enumerate(cfg.assignment.per_layer):
        site = {} if cap is not None else None
        x = encoder_block(
            x, block_params(params, i), kinds,
            training=training,
            rng=rng.spawn(i) if rng is not None else None,
            drop_path_p=cfg.drop_path,
            qk_norm=cfg.qk_norm,
            trace=trace,
            capture=site,
        )
        if cap is not None:
            cap.pre_mlp_ln.append(site["pre_mlp_ln"])
            cap.block_outputs.append(site["block_out"])
    z = ad.layer_norm(x, params["norm.g"], params["norm.b"])
    feats = z.mean(axis=1)
    logits = feats @ params["head.w"] + params["head.b"]
    if cap is not None:
        cap.final_norm = z.data.copy()
        cap.features = feats.data.copy()
    return logits, cap


def classifier_matrix(params: dict) -> np.ndarray:
    """Classifier weights as a (C, d) matrix, one row per class."""
    w = params["head.w"]
    return np.asarray(w.data if isinstance(w, Tensor) else w).T
