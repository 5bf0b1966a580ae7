"""Loss functions; each returns (scalar loss, gradient w.r.t. logits).

Scalar reductions accumulate in 64-bit regardless of the logit dtype.
"""
from __future__ import annotations

import numpy as np


def _log_softmax(logits: np.ndarray, axis: int):
    z = logits - logits.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    return z - lse


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy for integer class labels; logits (M, A), labels (M,)."""
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"bad shapes: logits {logits.shape}, labels {labels.shape}")
    m = logits.shape[0]
    logp = _log_softmax(logits, axis=1)
    rows = np.arange(m)
    loss = float(-logp[rows, labels].sum(dtype=np.float64) / m)
    dlogits = np.exp(logp)
    dlogits[rows, labels] -= 1.0
    return loss, (dlogits / m).astype(logits.dtype)


def weighted_pixel_cross_entropy(
    logits: np.ndarray,
    labels: np.ndarray,
    weights: tuple[float, float] = (1.0, 10.0),
):
    """Per-cell 2-way softmax cross-entropy with class weights, mean over cells.

    logits: (B, 2, H, W) (channel 0 free, channel 1 occupied);
    labels: (B, H, W) binary.  The loss is sum(w_label * ce) / (B*H*W).
    """
    if logits.ndim == 3:
        logits = logits[None]
        labels = labels[None]
    if logits.shape[1] != 2:
        raise ValueError(f"expected 2 channels, got {logits.shape[1]}")
    if labels.shape != (logits.shape[0], logits.shape[2], logits.shape[3]):
        raise ValueError(f"label shape {labels.shape} does not match logits {logits.shape}")
    lab = labels.astype(np.int64)
    n = lab.size
    logp = _log_softmax(logits, axis=1)
    picked = np.take_along_axis(logp, lab[:, None], axis=1)[:, 0]
    w = np.where(lab == 1, weights[1], weights[0])
    loss = float(-(w * picked).sum(dtype=np.float64) / n)
    p = np.exp(logp)
    onehot = np.stack([1.0 - lab, lab], axis=1)
    dlogits = (w[:, None] * (p - onehot) / n).astype(logits.dtype)
    return loss, dlogits


def occupied_probability(logits: np.ndarray):
    """Softmax over the 2 channels, returning the occupied channel.

    logits (B, 2, H, W) -> (prob (B, H, W), cache for the backward pass).
    """
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return p[:, 1], p


def occupied_probability_backward(dprob: np.ndarray, cache: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the 2-channel logits given d(loss)/d(occupied prob)."""
    p0, p1 = cache[:, 0], cache[:, 1]
    g = dprob * p0 * p1
    return np.stack([-g, g], axis=1).astype(cache.dtype)
