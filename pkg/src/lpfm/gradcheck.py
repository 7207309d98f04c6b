"""Central finite-difference check of the tape gradients."""

from __future__ import annotations

import numpy as np

from .autodiff import cross_entropy
from .model import ModelConfig, init_params, model_forward
from .numeric import RngState
from .train import loss_and_grads


def _loss(cfg, params, x, y) -> float:
    logits, _ = model_forward(cfg, params, x)
    return float(cross_entropy(logits, y).data)


def finite_difference_grads(cfg: ModelConfig, params: dict, x, y, step: float = 1e-3) -> dict:
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = _loss(cfg, params, x, y)
            flat[i] = orig - step
            down = _loss(cfg, params, x, y)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        out[name] = g
    return out


def relative_errors(analytic: dict, numeric: dict) -> dict[str, float]:
    """Per-parameter ``|a - n| / max(|a|, |n|)`` in the Euclidean norm."""
    errs = {}
    for name, a in analytic.items():
        n = numeric[name]
        denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-300)
        errs[name] = float(np.linalg.norm(a - n) / denom)
    return errs


def grad_check_model(seed: int = 0, depth: int = 2, heads: int = 2, dim: int = 8, seq_len: int = 4,
                     batch: int = 3, num_classes: int = 3, init_std: float = 0.5,
                     step: float = 1e-3, assignment: list[str] | None = None) -> dict[str, float]:
    """Relative gradient error for every parameter of a small mixed model.

    Weights are redrawn with a larger std than training init so every
    nonlinearity is exercised away from its linear regime.
    """
    cfg = ModelConfig(depth=depth, heads=heads, dim=dim, num_classes=num_classes, input_dim=dim,
                      seq_len=seq_len,
                      head_assignment=assignment or ["L" + "S" * (heads - 1)] * depth)
    root = RngState(seed)
    params = init_params(cfg, root.spawn("init"))
    g = root.spawn("perturb").generator()
    params = {k: v + init_std * g.normal(size=v.shape) for k, v in params.items()}
    x = g.normal(size=(batch, seq_len, dim))
    y = g.integers(0, num_classes, size=batch)
    _, _, analytic = loss_and_grads(cfg, params, x, y)
    numeric = finite_difference_grads(cfg, params, x, y, step)
    return relative_errors(analytic, numeric)
