"""Mask-aware forward and manual backward passes.

Masked weights are forced to exact ``+0.0`` before every matmul (``np.where``,
not multiplication) so outputs are bit-identical no matter what values the
masked slots hold.  Masked neurons are zeroed after batch-norm and the
activation, which also kills every gradient flowing through them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmptyBatchError, EvalCacheError, ShapeMismatchError
from .arch import Architecture, BnParams, ParamStore


def _act(y: np.ndarray, arch: Architecture) -> np.ndarray:
    if arch.activation == "relu":
        return np.maximum(y, 0)
    if arch.activation == "leaky_relu":
        return np.where(y > 0, y, y * np.asarray(arch.leaky_slope, dtype=y.dtype))
    return y


def _act_grad(y: np.ndarray, arch: Architecture) -> np.ndarray:
    one = np.asarray(1, dtype=y.dtype)
    if arch.activation == "relu":
        return (y > 0).astype(y.dtype)
    if arch.activation == "leaky_relu":
        return np.where(y > 0, one, np.asarray(arch.leaky_slope, dtype=y.dtype))
    return np.ones_like(y)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class Cache:
    """Activation record produced by a train-mode forward, consumed by backward."""

    mode: str
    arch: Architecture
    inputs: list          # a_{l}: input to weight layer l (post-mask activations)
    effective_w: list     # masked weight matrices actually used
    pre_bn: list          # z per hidden layer
    xhat: list            # normalized activations per hidden layer (BN only)
    inv_std: list         # 1/sqrt(var+eps) per hidden layer (BN only)
    post_bn: list         # y = gamma*xhat+beta (or z when no BN)
    neuron_mask: list
    weight_mask: list
    bn: BnParams
    head_out: np.ndarray | None  # sigmoid outputs for per-task heads
    head_z: np.ndarray | None


def _check_masks(arch, neuron_mask, weight_mask):
    if neuron_mask is not None:
        if len(neuron_mask) != arch.n_hidden:
            raise ShapeMismatchError(
                f"neuron mask covers {len(neuron_mask)} layers, net has {arch.n_hidden} hidden"
            )
        for h, m in enumerate(neuron_mask):
            if m.shape != (arch.hidden_dims[h],):
                raise ShapeMismatchError(
                    f"neuron mask hidden layer {h}: {m.shape}, expected {(arch.hidden_dims[h],)}"
                )
    if weight_mask is not None:
        if len(weight_mask) != arch.n_maskable:
            raise ShapeMismatchError(
                f"weight mask covers {len(weight_mask)} layers, net has {arch.n_maskable} maskable"
            )
        for l, m in enumerate(weight_mask):
            if m.shape != arch.weight_shape(l):
                raise ShapeMismatchError(
                    f"weight mask layer {l}: {m.shape}, expected {arch.weight_shape(l)}"
                )


def forward(
    arch: Architecture,
    params: ParamStore,
    bn: BnParams,
    neuron_mask,
    weight_mask,
    x: np.ndarray,
    mode: str = "train",
    head=None,
):
    """Run the masked net on a batch; returns ``(outputs, cache)``.

    ``neuron_mask``/``weight_mask`` may be None for a fully dense pass.  In
    train mode batch-norm normalizes with batch statistics (population
    variance) and updates the bank's running statistics in place; eval mode
    reads the running statistics and never mutates anything.

    ``head`` supplies ``(w, b)`` for a per-task head architecture and replaces
    the stored final layer; outputs then pass through the logistic link.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeMismatchError(f"inputs must be 2-d, got shape {x.shape}")
    if x.shape[0] < 1:
        raise EmptyBatchError("forward called with an empty batch")
    if x.shape[1] != arch.layer_dims[0]:
        raise ShapeMismatchError(
            f"input layer: batch has {x.shape[1]} features, arch expects {arch.layer_dims[0]}"
        )
    params.check_shapes(arch)
    bn.check_shapes(arch)
    _check_masks(arch, neuron_mask, weight_mask)
    per_task_head = arch.head_kind == "per_task_linear_sigmoid"
    if per_task_head and head is None:
        raise ValueError("per-task head architecture needs an explicit head")

    dtype = params.dtype
    a = x.astype(dtype, copy=False)
    zero = np.asarray(0, dtype=dtype)
    cache = Cache(
        mode=mode, arch=arch, inputs=[], effective_w=[], pre_bn=[], xhat=[],
        inv_std=[], post_bn=[], neuron_mask=neuron_mask, weight_mask=weight_mask,
        bn=bn, head_out=None, head_z=None,
    )

    for l in range(arch.n_layers):
        if per_task_head and l == arch.n_layers - 1:
            w, b = head
        else:
            w, b = params.weights[l], params.biases[l]
        if weight_mask is not None and l < arch.n_maskable:
            w_eff = np.where(weight_mask[l], w, zero)
        else:
            w_eff = w
        cache.inputs.append(a)
        cache.effective_w.append(w_eff)
        z = a @ w_eff.T + b

        if l == arch.n_layers - 1:
            if per_task_head:
                cache.head_z = z
                out = _sigmoid(z)
                cache.head_out = out
                return out, cache
            return z, cache

        h = l  # hidden layer index
        cache.pre_bn.append(z)
        if arch.has_batchnorm[h]:
            if mode == "train":
                mu = z.mean(axis=0)
                var = z.var(axis=0)  # population variance (divide by n)
                inv_std = 1.0 / np.sqrt(var + np.asarray(bn.eps, dtype=dtype))
                xhat = (z - mu) * inv_std
                m = np.asarray(bn.momentum, dtype=dtype)
                bn.running_mean[h] *= 1 - m
                bn.running_mean[h] += m * mu
                bn.running_var[h] *= 1 - m
                bn.running_var[h] += m * var
            else:
                inv_std = 1.0 / np.sqrt(
                    bn.running_var[h] + np.asarray(bn.eps, dtype=dtype)
                )
                xhat = (z - bn.running_mean[h]) * inv_std
            y = bn.gamma[h] * xhat + bn.beta[h]
            cache.xhat.append(xhat)
            cache.inv_std.append(inv_std)
        else:
            y = z
            cache.xhat.append(None)
            cache.inv_std.append(None)
        cache.post_bn.append(y)
        act = _act(y, arch)
        if neuron_mask is not None:
            act = np.where(neuron_mask[h], act, zero)
        a = act

    raise AssertionError("unreachable")


@dataclass
class Gradients:
    """Gradients matching ParamStore weights/biases plus BN gamma/beta."""

    weights: list
    biases: list
    gamma: list
    beta: list
    head_w: np.ndarray | None = None
    head_b: np.ndarray | None = None


def backward(cache: Cache, loss_grad: np.ndarray) -> Gradients:
    """Backpropagate ``d(mean loss)/d(outputs)`` through a train-mode cache.

    Masked weights get exactly zero gradient; so do the BN parameters of
    masked neurons (their forward contribution is zero already).
    """
    if cache.mode != "train":
        raise EvalCacheError("backward needs a cache from a train-mode forward")
    arch = cache.arch
    dtype = cache.inputs[0].dtype
    per_task_head = arch.head_kind == "per_task_linear_sigmoid"
    zero = np.asarray(0, dtype=dtype)

    loss_grad = np.asarray(loss_grad, dtype=dtype)
    grads = Gradients(
        weights=[None] * arch.n_layers,
        biases=[None] * arch.n_layers,
        gamma=[], beta=[],
    )

    if per_task_head:
        out = cache.head_out
        dz = loss_grad * out * (1 - out)
    else:
        dz = loss_grad

    for l in range(arch.n_layers - 1, -1, -1):
        a_in = cache.inputs[l]
        dw = dz.T @ a_in
        if cache.weight_mask is not None and l < arch.n_maskable:
            dw = np.where(cache.weight_mask[l], dw, zero)
        db = dz.sum(axis=0)
        if per_task_head and l == arch.n_layers - 1:
            grads.head_w, grads.head_b = dw, db
        else:
            grads.weights[l] = dw
            grads.biases[l] = db
        if l == 0:
            break
        da = dz @ cache.effective_w[l]

        h = l - 1  # hidden layer feeding this weight layer
        if cache.neuron_mask is not None:
            da = np.where(cache.neuron_mask[h], da, zero)
        y = cache.post_bn[h]
        dy = da * _act_grad(y, arch)
        if arch.has_batchnorm[h]:
            xhat, inv_std = cache.xhat[h], cache.inv_std[h]
            grads.gamma.insert(0, (dy * xhat).sum(axis=0))
            grads.beta.insert(0, dy.sum(axis=0))
            dxhat = dy * cache.bn.gamma[h]
            n = np.asarray(dy.shape[0], dtype=dtype)
            dz = (inv_std / n) * (
                n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
            )
        else:
            grads.gamma.insert(0, np.zeros(0, dtype=dtype))
            grads.beta.insert(0, np.zeros(0, dtype=dtype))
            dz = dy

    # Per-task heads sit outside the masked trunk; keep list slots aligned.
    if per_task_head:
        grads.weights[-1] = np.zeros_like(cache.effective_w[-1])
        grads.biases[-1] = np.zeros(cache.effective_w[-1].shape[0], dtype=dtype)
    return grads
