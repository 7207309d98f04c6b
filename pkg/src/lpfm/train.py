"""AdamW, warmup-cosine schedule and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .autodiff import Tape, Tensor, cross_entropy
from .data import LabeledDataset
from .errors import TrainingError
from .model import ModelConfig, init_params, model_forward
from .numeric import RngState

log = logging.getLogger(__name__)


@dataclass
class TrainHyper:
    epochs: int = 30
    batch_size: int = 64
    peak_lr: float = 3e-4
    start_lr: float = 3e-6
    min_lr: float = 0.0
    warmup_epochs: int = 5
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 0.05
    grad_clip: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimizerState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 0.05
    grad_clip: float | None = 1.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def clip_by_global_norm(grads: dict, max_norm: float | None) -> tuple[dict, float]:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def adamw_step(state: OptimizerState, params: dict, grads: dict, no_decay=frozenset()) -> dict:
    """One AdamW update; returns new parameter arrays, advances ``state``.

    Order: clip by global norm, decoupled decay ``p *= 1 - lr*wd``, then the
    bias-corrected Adam step. Parameters without a gradient are untouched.
    """
    grads, _ = clip_by_global_norm(grads, state.grad_clip)
    state.step += 1
    t = state.step
    lr = state.lr
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    out = dict(params)
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - state.beta1) * g if m is None else state.beta1 * m + (1.0 - state.beta1) * g
        v = (1.0 - state.beta2) * g * g if v is None else state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        if name not in no_decay:
            p = p * (1.0 - lr * state.weight_decay)
        out[name] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return out


def lr_at(step: int, warmup_steps: int, total_steps: int, peak: float, start: float = 0.0,
          min_lr: float = 0.0) -> float:
    """Linear ``start -> peak`` over warmup, then cosine ``peak -> min_lr``."""
    if step < warmup_steps:
        return start + (peak - start) * step / warmup_steps
    span = total_steps - warmup_steps
    if span <= 0:
        return peak
    progress = min(1.0, (step - warmup_steps) / span)
    return min_lr + (peak - min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


def no_decay_names(params: dict) -> frozenset:
    """Biases, norm gains and qk gains are not decayed."""
    return frozenset(k for k, v in params.items() if np.ndim(v) < 2 or k.endswith("_gain"))


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float


@dataclass
class TrainResult:
    params: dict
    history: list[EpochMetrics]


def evaluate(cfg: ModelConfig, params: dict, data: LabeledDataset, batch_size: int = 256) -> tuple[float, float]:
    total_loss, correct = 0.0, 0
    for lo in range(0, len(data), batch_size):
        xb, yb = data.inputs[lo:lo + batch_size], data.labels[lo:lo + batch_size]
        logits, _ = model_forward(cfg, params, xb)
        total_loss += float(cross_entropy(logits, yb).data) * len(yb)
        correct += int(np.sum(np.argmax(logits.data, axis=1) == yb))
    return total_loss / len(data), correct / len(data)


def loss_and_grads(cfg: ModelConfig, params: dict, xb, yb, training: bool = False,
                   rng: RngState | None = None, trainable: Callable[[str], bool] | None = None):
    with Tape() as tape:
        wrapped = {k: (Tensor.param(v, k) if trainable is None or trainable(k) else Tensor(v))
                   for k, v in params.items()}
        logits, _ = model_forward(cfg, wrapped, xb, training=training, rng=rng)
        loss = cross_entropy(logits, yb)
    return float(loss.data), logits.data, tape.backward(loss)


def train(cfg: ModelConfig, train_set: LabeledDataset, test_set: LabeledDataset | None,
          hyper: TrainHyper, seed: int, params: dict | None = None,
          trainable: Callable[[str], bool] | None = None) -> TrainResult:
    """Minibatch AdamW training; deterministic given ``seed``."""
    if len(train_set) == 0:
        raise ValueError("empty training set")
    root = RngState(seed)
    if params is None:
        params = init_params(cfg, root.spawn("init"))
    state = OptimizerState(lr=hyper.peak_lr, beta1=hyper.beta1, beta2=hyper.beta2, eps=hyper.eps,
                           weight_decay=hyper.weight_decay, grad_clip=hyper.grad_clip)
    skip_decay = no_decay_names(params)
    n = len(train_set)
    steps_per_epoch = math.ceil(n / hyper.batch_size)
    total = hyper.epochs * steps_per_epoch
    warmup = hyper.warmup_epochs * steps_per_epoch
    history = []
    step = 0
    for epoch in range(hyper.epochs):
        order = root.spawn(f"shuffle{epoch}").generator().permutation(n)
        run_loss, run_correct = 0.0, 0
        for lo in range(0, n, hyper.batch_size):
            idx = order[lo:lo + hyper.batch_size]
            xb, yb = train_set.inputs[idx], train_set.labels[idx]
            loss, logits, grads = loss_and_grads(cfg, params, xb, yb, training=True,
                                                 rng=root.spawn(f"step{step}"), trainable=trainable)
            if not math.isfinite(loss):
                raise TrainingError("non-finite training loss", epoch)
            state.lr = lr_at(step, warmup, total, hyper.peak_lr, hyper.start_lr, hyper.min_lr)
            params = adamw_step(state, params, grads, skip_decay)
            run_loss += loss * len(idx)
            run_correct += int(np.sum(np.argmax(logits, axis=1) == yb))
            step += 1
        test_loss, test_acc = evaluate(cfg, params, test_set) if test_set is not None else (float("nan"),) * 2
        m = EpochMetrics(epoch, state.lr, run_loss / n, run_correct / n, test_loss, test_acc)
        log.debug("epoch %d loss %.4f acc %.3f test %.3f", epoch, m.train_loss, m.train_acc, m.test_acc)
        history.append(m)
    return TrainResult(params, history)
