"""Attention weights as a random walk: graph Laplacian and explicit heat steps.

With ``W_V = I`` and ``W_o = -I`` a single Laplacian head plus the residual
connection computes ``X - (I - P) X``, one explicit Euler step of the heat
equation on the token graph. :func:`equivalence_check` measures that
identity numerically.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attention import HeadKind, attention_weights, encoder_block
from .errors import NumericInputError
from .geometry import cossim
from .numeric import RngState

STOCHASTIC_TOL = 1e-12


def _row_deviation(p: np.ndarray) -> float:
    return float(np.max(np.abs(p.sum(axis=-1) - 1.0)))


def graph_laplacian(p: np.ndarray) -> np.ndarray:
    """Random-walk Laplacian ``I - P`` of a row-stochastic ``P``."""
    p = np.asarray(p, dtype=float)
    dev = _row_deviation(p)
    if dev > STOCHASTIC_TOL or np.any(p < 0):
        raise NumericInputError(f"P is not row-stochastic (max row-sum deviation {dev:.3e})")
    return np.eye(p.shape[-1]) - p


def heat_step(x: np.ndarray, p: np.ndarray, dt: float = 1.0) -> np.ndarray:
    """``X - dt (I - P) X``; ``dt = 1`` gives exactly ``P X``."""
    if not 0.0 < dt <= 1.0:
        raise NumericInputError("dt must lie in (0, 1]")
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if dt == 1.0:
        return p @ x
    return x - dt * (x - p @ x)


def row_spread(x: np.ndarray) -> float:
    """Largest distance of a row from the row mean."""
    x = np.asarray(x, dtype=float)
    return float(np.max(np.linalg.norm(x - x.mean(axis=-2, keepdims=True), axis=-1)))


def uniform_mixture(t: int, weight: float, rng: RngState) -> np.ndarray:
    """``weight * uniform + (1 - weight) * random stochastic``: strictly positive, hence primitive."""
    r = rng.generator().random((t, t))
    r /= r.sum(axis=1, keepdims=True)
    return weight / t + (1.0 - weight) * r


@dataclass
class TrajectoryPoint:
    step: int
    row_spread: float
    cossim: float


def diffuse(x: np.ndarray, steps: int, dt: float = 1.0, p: np.ndarray | None = None,
            w_q: np.ndarray | None = None, w_k: np.ndarray | None = None,
            recompute: bool = True) -> tuple[np.ndarray, list[TrajectoryPoint]]:
    """Iterate heat steps on one token sequence.

    Pass a fixed ``p``, or attention matrices ``w_q``/``w_k`` from which P
    is computed; with ``recompute`` P is refreshed from the current tokens
    every step, otherwise it stays frozen at its initial value.
    """
    x = np.asarray(x, dtype=float)
    if p is None and (w_q is None or w_k is None):
        raise NumericInputError("need either P or attention matrices")
    frozen = p
    if frozen is None and not recompute:
        frozen = attention_weights(x, w_q, w_k).data

    def point(i, z):
        return TrajectoryPoint(i, row_spread(z), cossim(z[None]) if z.shape[0] > 1 else 1.0)

    traj = [point(0, x)]
    for i in range(1, steps + 1):
        pi = frozen if frozen is not None else attention_weights(x, w_q, w_k).data
        x = heat_step(x, pi, dt)
        traj.append(point(i, x))
    return x, traj


def write_trajectory_csv(path, traj: list[TrajectoryPoint]) -> None:
    with open(Path(path), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "row_spread", "cossim"])
        for pt in traj:
            wr.writerow([pt.step, repr(pt.row_spread), repr(pt.cossim)])


def heat_block_params(d: int, w_q: np.ndarray, w_k: np.ndarray, sign: float = -1.0) -> dict:
    """Single-head block with ``W_V = I``, ``W_o = sign * I`` and a zero MLP."""
    return {
        "w_q": np.asarray(w_q, dtype=float).reshape(1, d, -1),
        "w_k": np.asarray(w_k, dtype=float).reshape(1, d, -1),
        "w_v": np.eye(d)[None],
        "w_o": sign * np.eye(d),
        "mlp_w1": np.zeros((d, 4 * d)),
        "mlp_b1": np.zeros(4 * d),
        "mlp_w2": np.zeros((4 * d, d)),
        "mlp_b2": np.zeros(d),
    }


def heat_block(x: np.ndarray, params: dict) -> np.ndarray:
    return encoder_block(x[None], params, (HeadKind.LAPLACIAN,), use_norm=False).data[0]


def equivalence_check(seq_len: int = 4, dim: int = 4, trials: int = 20, seed: int = 0,
                      sign: float = -1.0, constant: bool = False) -> float:
    """Max |block(X) - heat_step(X, P, 1)| over random inputs and query/key weights.

    ``P`` is the block's own attention matrix on ``X`` (the norms are
    pass-through, so it sees ``X`` directly).
    """
    worst = 0.0
    root = RngState(seed)
    for i in range(trials):
        g = root.spawn(i).generator()
        x = g.normal(size=(seq_len, dim))
        if constant:
            x = np.broadcast_to(x[0], x.shape).copy()
        w_q = g.normal(size=(dim, dim))
        w_k = g.normal(size=(dim, dim))
        params = heat_block_params(dim, w_q, w_k, sign)
        out = heat_block(x, params)
        p = attention_weights(x, w_q, w_k).data
        worst = max(worst, float(np.max(np.abs(out - heat_step(x, p, 1.0)))))
    return worst
