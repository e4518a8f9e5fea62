"""Batch-mean losses and their output gradients."""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteLossError

LOSS_KINDS = ("softmax_xent", "squared")


def loss(outputs: np.ndarray, targets: np.ndarray, kind: str):
    """Return ``(mean_loss, loss_grad)`` where the grad is d(mean)/d(outputs).

    ``softmax_xent`` treats outputs as logits over classes and targets as
    integer class indices; ``squared`` sums squared error over output dims and
    averages over the batch.
    """
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    outputs = np.asarray(outputs)
    if not np.all(np.isfinite(outputs)):
        bad = int(np.count_nonzero(~np.isfinite(outputs)))
        raise NonFiniteLossError(
            f"{bad} non-finite network outputs (shape {outputs.shape})"
        )
    n = outputs.shape[0]

    if kind == "softmax_xent":
        targets = np.asarray(targets, dtype=np.int64)
        shifted = outputs - outputs.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=1, keepdims=True)
        picked = shifted[np.arange(n), targets]
        value = float(np.mean(np.log(exp.sum(axis=1)) - picked))
        grad = probs
        grad[np.arange(n), targets] -= 1
        grad /= n
        return value, grad.astype(outputs.dtype)

    targets = np.asarray(targets, dtype=outputs.dtype)
    if targets.ndim < outputs.ndim:
        targets = targets.reshape(outputs.shape)
    diff = outputs - targets
    value = float(np.sum(diff * diff) / n)
    grad = (2.0 / n) * diff
    return value, grad.astype(outputs.dtype)
