"""Training objectives: temperature-scaled contrastive loss with momentum
soft targets, similarity-weighted hard-negative sampling, and the binary
pair-matching loss.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class NotSquare(ValueError):
    """The in-batch similarity matrix must be square (diagonal = positives)."""


class BatchTooSmall(ValueError):
    """Hard-negative sampling needs at least two pairs."""


@dataclass
class LossConfig:
    w1: float = 1.0
    w2: float = 1.0
    soft_label_mix: float = 0.4
    hard_negative: bool = True

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 <= self.soft_label_mix <= 1.0:
            raise ValueError("soft_label_mix must be in [0, 1]")


def _softmax_np(x: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _log_softmax(z: Tensor, axis: int) -> Tensor:
    # max-shift detached: constant offset keeps exp() in range without
    # entering the gradient
    shift = z.data.max(axis=axis, keepdims=True)
    shifted = ad.add(z, -shift)
    lse = ad.log(ad.tsum(ad.exp(shifted), axis=axis, keepdims=True))
    return ad.add(shifted, ad.mul(lse, -1.0))


def contrastive_loss(s: Tensor, s_m: np.ndarray, tau: Tensor, alpha: float) -> Tensor:
    """Symmetric InfoNCE over an N x N similarity matrix.

    Targets mix the one-hot diagonal with softened momentum similarities:
    (1 - alpha) * onehot + alpha * softmax(s_m / tau); the soft part is a
    constant with respect to the graph. Row direction scores images
    against all texts, column direction the reverse.
    """
    n, m = s.shape
    if n != m:
        raise NotSquare(f"similarity matrix is {n}x{m}")
    s_m = np.asarray(s_m, dtype=np.float64)
    if s_m.shape != (n, n):
        raise NotSquare(f"momentum matrix is {s_m.shape}")
    tau_val = float(tau.data)
    eye = np.eye(n)
    targets_row = (1.0 - alpha) * eye + alpha * _softmax_np(s_m / tau_val, axis=1)
    targets_col = (1.0 - alpha) * eye + alpha * _softmax_np(s_m.T / tau_val, axis=1)

    z = ad.mul(s, ad.power(tau, -1.0))
    loss_row = ad.mul(ad.tmean(ad.tsum(ad.mul(_log_softmax(z, 1), targets_row), axis=1)), -1.0)
    zt = ad.transpose(z, (1, 0))
    loss_col = ad.mul(ad.tmean(ad.tsum(ad.mul(_log_softmax(zt, 1), targets_col), axis=1)), -1.0)
    return ad.mul(ad.add(loss_row, loss_col), 0.5)


def sample_hard_negatives(
    s: np.ndarray, rng: np.random.Generator, hard: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """Draw one non-matching partner per row and per column.

    Sampling weight is the softmax (temperature 1) of off-diagonal
    similarities, so near-duplicates are picked often; with ``hard=False``
    the draw is uniform. Returns (negative text per image, negative image
    per text).
    """
    s = np.asarray(s, dtype=np.float64)
    n = s.shape[0]
    if s.shape != (n, n):
        raise NotSquare(f"similarity matrix is {s.shape}")
    if n < 2:
        raise BatchTooSmall("need at least 2 pairs to sample negatives")

    def draw(matrix: np.ndarray) -> np.ndarray:
        picks = np.empty(n, dtype=np.intp)
        for i in range(n):
            if hard:
                w = np.exp(matrix[i] - matrix[i].max())
            else:
                w = np.ones(n)
            w[i] = 0.0
            picks[i] = rng.choice(n, p=w / w.sum())
        return picks

    return draw(s), draw(s.T)


def itm_loss(positive_probs: Tensor, negative_probs: Tensor) -> Tensor:
    """Mean binary cross-entropy over matched and mismatched pairs."""
    probs = ad.clip(ad.concat([positive_probs, negative_probs]), 1e-7, 1.0 - 1e-7)
    n_pos = positive_probs.shape[0]
    n_neg = negative_probs.shape[0]
    labels = np.concatenate([np.ones(n_pos), np.zeros(n_neg)])
    ll = ad.add(
        ad.mul(ad.log(probs), labels),
        ad.mul(ad.log(ad.add(ad.mul(probs, -1.0), 1.0)), 1.0 - labels),
    )
    return ad.mul(ad.tmean(ll), -1.0)


def total_loss(l_con: Tensor, l_mat: Tensor | None, config: LossConfig) -> Tensor:
    """w1 * contrastive + w2 * matching; a missing matching term counts as 0."""
    out = ad.mul(l_con, config.w1)
    if l_mat is not None:
        out = ad.add(out, ad.mul(l_mat, config.w2))
    return out
