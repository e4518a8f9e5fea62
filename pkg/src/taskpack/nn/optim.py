"""Mask-restricted optimizers: sgd, rmsprop, adam.

Updates touch only the coordinates in the trainable set; everything else is
bit-unchanged, which is what the freeze guarantees of the continual engine
rest on.  Moment buffers are fed masked gradients, so they carry state only
for trainable coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arch import BnParams, ParamStore

OPT_KINDS = ("sgd", "rmsprop", "adam")


@dataclass(frozen=True)
class OptSpec:
    kind: str = "rmsprop"
    beta1: float = 0.9
    beta2: float = 0.999
    rho: float = 0.9
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in OPT_KINDS:
            raise ValueError(f"unknown optimizer kind {self.kind!r}")


@dataclass
class TrainableSet:
    """Boolean masks of what one phase may update.

    ``weights[l]``/``biases[l]`` align with ParamStore layers; ``bn`` gates
    the task's gamma/beta; ``head`` gates a private per-task head.
    """

    weights: list
    biases: list
    bn: bool = True
    head: bool = False


class OptState:
    """Moment buffers plus the shared step counter (adam bias correction)."""

    def __init__(self, spec: OptSpec):
        self.spec = spec
        self.t = 0
        self._m: dict = {}
        self._v: dict = {}

    def _buffers(self, key, like):
        if key not in self._v:
            self._v[key] = np.zeros_like(like)
            if self.spec.kind == "adam":
                self._m[key] = np.zeros_like(like)
        return self._m.get(key), self._v[key]

    def _update(self, key, param: np.ndarray, grad: np.ndarray, mask, lr: float):
        """Apply one step to ``param`` in place, restricted to ``mask``."""
        spec = self.spec
        if mask is not None:
            grad = np.where(mask, grad, np.asarray(0, dtype=grad.dtype))
        if spec.kind == "sgd":
            step = lr * grad
        elif spec.kind == "rmsprop":
            _, v = self._buffers(key, param)
            v *= spec.rho
            v += (1 - spec.rho) * grad * grad
            step = lr * grad / (np.sqrt(v) + spec.eps)
        else:  # adam
            m, v = self._buffers(key, param)
            m *= spec.beta1
            m += (1 - spec.beta1) * grad
            v *= spec.beta2
            v += (1 - spec.beta2) * grad * grad
            mhat = m / (1 - spec.beta1 ** self.t)
            vhat = v / (1 - spec.beta2 ** self.t)
            step = lr * mhat / (np.sqrt(vhat) + spec.eps)
        if mask is not None:
            np.subtract(param, step, out=param, where=np.asarray(mask))
        else:
            param -= step.astype(param.dtype, copy=False)


def optimizer_step(
    state: OptState,
    params: ParamStore,
    bn: BnParams,
    grads,
    trainable: TrainableSet,
    lr: float,
    head=None,
):
    """One update over weights/biases (per trainable masks), BN bank, and head."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state.t += 1
    for l, w in enumerate(params.weights):
        state._update(("w", l), w, grads.weights[l], trainable.weights[l], lr)
        state._update(("b", l), params.biases[l], grads.biases[l], trainable.biases[l], lr)
    if trainable.bn:
        for h in range(len(bn.gamma)):
            if bn.gamma[h].size == 0:
                continue
            state._update(("g", h), bn.gamma[h], grads.gamma[h], None, lr)
            state._update(("be", h), bn.beta[h], grads.beta[h], None, lr)
    if trainable.head and head is not None:
        state._update(("hw",), head[0], grads.head_w, None, lr)
        state._update(("hb",), head[1], grads.head_b, None, lr)
