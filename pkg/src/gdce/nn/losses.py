"""Loss functions returning (value, gradient) pairs."""

from __future__ import annotations

import numpy as np


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax(logits) against integer labels.

    logits: (B, C) or (C,); labels: (B,) ints or a single int. The gradient
    (softmax - onehot) / B comes back in the shape of logits. Uses the
    log-sum-exp shift so saturated logits stay finite.
    """
    z = np.asarray(logits, dtype=np.float64)
    squeeze = z.ndim == 1
    if squeeze:
        z = z[None, :]
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    b, c = z.shape
    if y.shape != (b,):
        raise ValueError(f"labels shape {y.shape} does not match batch {b}")
    if (y < 0).any() or (y >= c).any():
        raise ValueError(f"label out of range [0, {c})")
    shifted = z - z.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(b), y].mean())
    grad = np.exp(log_probs)
    grad[np.arange(b), y] -= 1.0
    grad /= b
    if squeeze:
        grad = grad[0]
    return loss, grad.astype(np.asarray(logits).dtype, copy=False)


def l1_loss(a: np.ndarray, b: np.ndarray, reduction: str = "mean") -> tuple[float, np.ndarray]:
    """L1 distance between two equal-shape tensors and its gradient wrt `a`."""
    if a.shape != b.shape:
        raise ValueError(f"l1 shapes differ: {a.shape} vs {b.shape}")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    grad = np.sign(diff)
    if reduction == "mean":
        value = float(np.abs(diff).mean())
        grad = grad / diff.size
    else:
        value = float(np.abs(diff).sum())
    return value, grad.astype(np.asarray(a).dtype, copy=False)
