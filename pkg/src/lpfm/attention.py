"""Standard and Laplacian attention heads and the pre-LN encoder block.

A Laplacian head uses the same attention weights ``P`` as a standard head
but returns ``V - P V`` instead of ``P V``. Per-layer head kinds are carried
by :class:`HeadAssignment`; the uniform-k, mix-depth and interleave
strategies are just different assignments.

All functions accept numpy arrays or :class:`~lpfm.autodiff.Tensor` and
return tensors, so the same code runs inside and outside a tape.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import ConfigurationError
from .numeric import RngState


class HeadKind(str, enum.Enum):
    STANDARD = "S"
    LAPLACIAN = "L"


@dataclass(frozen=True)
class HeadAssignment:
    per_layer: tuple[tuple[HeadKind, ...], ...]

    def __post_init__(self):
        widths = {len(layer) for layer in self.per_layer}
        if len(widths) > 1:
            raise ConfigurationError(f"layers list different head counts: {sorted(widths)}")

    @property
    def depth(self) -> int:
        return len(self.per_layer)

    @property
    def heads(self) -> int:
        return len(self.per_layer[0]) if self.per_layer else 0

    def laplacian_counts(self) -> list[int]:
        return [sum(k is HeadKind.LAPLACIAN for k in layer) for layer in self.per_layer]

    def to_strings(self) -> list[str]:
        return ["".join(k.value for k in layer) for layer in self.per_layer]

    @classmethod
    def from_strings(cls, rows) -> "HeadAssignment":
        try:
            return cls(tuple(tuple(HeadKind(ch) for ch in row) for row in rows))
        except ValueError as exc:
            raise ConfigurationError(f"bad head assignment {rows!r}: use 'S'/'L' per head") from exc

    @classmethod
    def uniform(cls, depth: int, heads: int, k: int) -> "HeadAssignment":
        """``k`` Laplacian heads (the first ``k``) in every layer."""
        if not 0 <= k <= heads:
            raise ConfigurationError(f"k={k} outside [0, {heads}]")
        row = (HeadKind.LAPLACIAN,) * k + (HeadKind.STANDARD,) * (heads - k)
        return cls((row,) * depth)

    @classmethod
    def mix_depth(cls, depth: int, heads: int) -> "HeadAssignment":
        """Laplacian-only blocks in the first half, standard-only after."""
        half = depth // 2
        return cls(tuple((HeadKind.LAPLACIAN if i < half else HeadKind.STANDARD,) * heads
                         for i in range(depth)))

    @classmethod
    def interleave(cls, depth: int, heads: int, laplacian_first: bool = True) -> "HeadAssignment":
        first = HeadKind.LAPLACIAN if laplacian_first else HeadKind.STANDARD
        other = HeadKind.STANDARD if laplacian_first else HeadKind.LAPLACIAN
        return cls(tuple(((first if i % 2 == 0 else other),) * heads for i in range(depth)))


def _project(x: Tensor, w: Tensor) -> Tensor:
    # (B, T, d) @ (h, d, dk) -> (B, h, T, dk); unbatched inputs broadcast the same way
    if w.ndim == 3 and x.ndim == 3:
        x = x.reshape(x.shape[0], 1, x.shape[1], x.shape[2])
    return x @ w


def attention_weights(x, w_q, w_k, qk_norm: bool = False, q_gain=None, k_gain=None) -> Tensor:
    """Row-stochastic ``softmax(Q K^T / sqrt(d_k))``."""
    x, w_q, w_k = as_tensor(x), as_tensor(w_q), as_tensor(w_k)
    q = _project(x, w_q)
    k = _project(x, w_k)
    if qk_norm:
        q = ad.row_normalize(q)
        k = ad.row_normalize(k)
        if q_gain is not None:
            q = q * q_gain
        if k_gain is not None:
            k = k * k_gain
    d_k = w_q.shape[-1]
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    scores = (q @ k.transpose(*axes)) * (1.0 / np.sqrt(d_k))
    return ad.softmax(scores, axis=-1)


def head_forward(kind: HeadKind, x, w_q, w_k, w_v, qk_norm: bool = False) -> Tensor:
    """One head: ``P V`` for standard, ``V - P V`` for Laplacian."""
    p = attention_weights(x, w_q, w_k, qk_norm)
    v = as_tensor(x) @ as_tensor(w_v)
    pv = p @ v
    if HeadKind(kind) is HeadKind.LAPLACIAN:
        return v - pv
    return pv


def mixed_multi_head(x, params: dict, kinds, qk_norm: bool = False, trace: list | None = None) -> Tensor:
    """Heads of mixed kinds, concatenated in assignment order, then ``@ w_o``.

    ``params`` holds ``w_q, w_k, w_v`` of shape (h, d, d_k) and ``w_o`` of
    shape (h*d_k, d); with qk-norm, optional ``q_gain``/``k_gain`` (h, 1, d_k).
    """
    x = as_tensor(x)
    w_q, w_k, w_v, w_o = (as_tensor(params[n]) for n in ("w_q", "w_k", "w_v", "w_o"))
    h, _, d_k = w_q.shape
    kinds = tuple(HeadKind(k) for k in kinds)
    if len(kinds) != h:
        raise ConfigurationError(f"assignment has {len(kinds)} kinds for {h} heads")
    if trace is not None:
        trace.append(kinds)

    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    b, t, _ = x.shape
    p = attention_weights(x, w_q, w_k, qk_norm, params.get("q_gain"), params.get("k_gain"))
    v = _project(x, w_v)
    pv = p @ v

    n_lap = sum(k is HeadKind.LAPLACIAN for k in kinds)
    if n_lap == 0:
        out = pv
    elif n_lap == h:
        out = v - pv
    else:
        lap = np.array([k is HeadKind.LAPLACIAN for k in kinds], dtype=float).reshape(1, h, 1, 1)
        out = v * lap + pv * (1.0 - 2.0 * lap)

    out = out.transpose(0, 2, 1, 3).reshape(b, t, h * d_k) @ w_o
    if squeeze:
        out = out.reshape(t, out.shape[-1])
    return out


def mlp(x, params: dict) -> Tensor:
    hidden = ad.gelu(as_tensor(x) @ params["mlp_w1"] + params["mlp_b1"])
    return hidden @ params["mlp_w2"] + params["mlp_b2"]


def drop_path(branch: Tensor, p: float, training: bool, rng: RngState | None) -> Tensor:
    """Per-sample branch dropout with survivor rescaling; identity at eval."""
    if not training or p <= 0.0:
        return branch
    b = branch.shape[0]
    if p >= 1.0:
        keep = np.zeros((b,) + (1,) * (branch.ndim - 1))
    else:
        if rng is None:
            raise ConfigurationError("training with drop path needs an RngState")
        draws = rng.generator().random(b)
        keep = (draws >= p).astype(float).reshape((b,) + (1,) * (branch.ndim - 1)) / (1.0 - p)
    return branch * keep


def encoder_block(x, params: dict, kinds, *, training: bool = False, rng: RngState | None = None,
                  drop_path_p: float = 0.0, qk_norm: bool = False, use_norm: bool = True,
                  trace: list | None = None, capture: dict | None = None) -> Tensor:
    """Pre-LN block: ``x + DropPath(MHA(LN1 x))`` then ``x + DropPath(MLP(LN2 x))``.

    ``use_norm=False`` swaps both LayerNorms for identity; only the
    diffusion equivalence check uses it. ``capture`` receives the pre-MLP
    LayerNorm output and the block output as numpy arrays.
    """
    x = as_tensor(x)
    ln = (lambda z, g, b: ad.layer_norm(z, params[g], params[b])) if use_norm else (lambda z, g, b: z)
    rng_attn = rng.spawn("attn") if rng is not None else None
    rng_mlp = rng.spawn("mlp") if rng is not None else None

    attn = mixed_multi_head(ln(x, "ln1_g", "ln1_b"), params, kinds, qk_norm, trace)
    x = x + drop_path(attn, drop_path_p, training, rng_attn)
    z = ln(x, "ln2_g", "ln2_b")
    if capture is not None:
        capture["pre_mlp_ln"] = z.data.copy()
    x = x + drop_path(mlp(z, params), drop_path_p, training, rng_mlp)
    if capture is not None:
        capture["block_out"] = x.data.copy()
    return x
