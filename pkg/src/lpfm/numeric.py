"""Small dense kernels: softmax, layer norm, thin SVD, seeded initialisation.

Everything here is a pure function of its inputs. Randomness enters only
through :class:`RngState`, a (seed, counter) pair backed by the Philox
counter-based generator, so the same state gives the same draws everywhere.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, NumericInputError

LN_EPS = 1e-6


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NumericInputError(f"{what} contains non-finite entries")


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with per-row max subtraction."""
    m = np.asarray(m, dtype=float)
    _check_finite(m, "softmax input")
    z = m - m.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    """Normalise each token over its channels (biased variance), then scale and shift.

    ``eps=0`` is allowed for exact-geometry checks on non-constant tokens; a
    constant token then maps to ``beta``.
    """
    x = np.asarray(x, dtype=float)
    _check_finite(x, "layer_norm input")
    if eps < 0:
        raise NumericInputError("eps must be non-negative")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    denom = np.sqrt(var + eps)
    with np.errstate(invalid="ignore", divide="ignore"):
        xhat = np.where(denom > 0, xc / np.where(denom > 0, denom, 1.0), 0.0)
    return gamma * xhat + beta


# --------------------------------------------------------------------------
# Thin SVD by one-sided (Hestenes) Jacobi


def _jacobi_columns(a: np.ndarray, tol: float, max_sweeps: int) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonalise the columns of ``a`` by plane rotations; returns (A V, V)."""
    a = a.copy()
    n = a.shape[1]
    v = np.eye(n)
    off = 0.0
    for _ in range(max_sweeps):
        off = 0.0
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                ap, aq = a[:, p], a[:, q]
                alpha = ap @ ap
                beta = aq @ aq
                gamma = ap @ aq
                if gamma == 0.0 or alpha == 0.0 or beta == 0.0:
                    continue
                scale = np.sqrt(alpha) * np.sqrt(beta)
                rel = abs(gamma) / scale
                off = max(off, rel)
                if rel <= tol:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if abs(zeta) > 1e150:
                    t = 0.5 / zeta
                else:
                    t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                new_p = c * ap - s * aq
                new_q = s * ap + c * aq
                a[:, p], a[:, q] = new_p, new_q
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        if not rotated:
            return a, v
    raise ConvergenceError("Jacobi SVD did not converge", off)


def _complete_basis(u: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace columns of ``u`` not in ``keep`` with an orthonormal completion."""
    m, k = u.shape
    basis = [u[:, j] for j in range(k) if keep[j]]
    out = u.copy()
    candidates = iter(np.eye(m))
    for j in range(k):
        if keep[j]:
            continue
        while True:
            e = next(candidates)
            for _ in range(2):
                for b in basis:
                    e = e - (b @ e) * b
            nrm = np.linalg.norm(e)
            if nrm > 0.5:
                e = e / nrm
                break
        basis.append(e)
        out[:, j] = e
    return out


def thin_svd(m: np.ndarray, tol: float = 1e-15, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``m = U diag(S) Vt`` with S nonincreasing.

    Rotations act on the side with fewer columns. Tall inputs are first
    reduced to their square R factor so the sweeps stay cheap.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or min(m.shape) < 1:
        raise NumericInputError("thin_svd needs a non-empty 2-D matrix")
    _check_finite(m, "thin_svd input")
    if m.shape[0] < m.shape[1]:
        u, s, vt = thin_svd(m.T, tol, max_sweeps)
        return vt.T, s, u.T

    rows, cols = m.shape
    amax = float(np.max(np.abs(m)))
    if amax == 0.0:
        k = cols
        return _complete_basis(np.zeros((rows, k)), np.zeros(k, bool)), np.zeros(k), np.eye(k)
    m = m / amax
    q = None
    a = m
    if rows > 2 * cols:
        q, a = np.linalg.qr(m, mode="reduced")

    av, v = _jacobi_columns(a, tol, max_sweeps)
    s = np.linalg.norm(av, axis=0)
    order = np.argsort(-s, kind="stable")
    s = s[order]
    av = av[:, order]
    v = v[:, order]

    smax = s[0] if s.size else 0.0
    keep = s > smax * 1e-14 if smax > 0 else np.zeros_like(s, dtype=bool)
    u = np.zeros_like(av)
    u[:, keep] = av[:, keep] / s[keep]
    s = np.where(keep, s, 0.0)
    if not keep.all():
        u = _complete_basis(u, keep)
    if q is not None:
        u = q @ u
    return u, s * amax, v.T


# --------------------------------------------------------------------------
# Seeded randomness


@dataclass(frozen=True)
class RngState:
    seed: int
    counter: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.seed % (1 << 64), counter=self.counter))

    def spawn(self, tag: int | str) -> "RngState":
        """Independent child stream keyed by ``tag``; parent is untouched."""
        if isinstance(tag, str):
            tag = int.from_bytes(hashlib.sha256(tag.encode()).digest()[:16], "little")
        words = np.random.SeedSequence([self.seed % (1 << 64), self.counter, tag % (1 << 128)]).generate_state(2, np.uint32)
        return RngState(int(words[0]) | (int(words[1]) << 32), 0)

    def advance(self, n: int = 1) -> "RngState":
        return RngState(self.seed, self.counter + n)


def trunc_normal_init(shape, std: float, rng: RngState) -> np.ndarray:
    """Normal(0, std^2) draws, redrawn until they land inside +-2*std."""
    if std <= 0:
        raise NumericInputError("std must be positive")
    g = rng.generator()
    out = g.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = g.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out
