"""Bitmask algebra and the supernet's continual-learning bookkeeping.

A weight mask is a list of boolean matrices congruent to the maskable weight
layers; a neuron mask is a list of boolean vectors, one per hidden layer
(input and output neurons are always active).  The serialized form packs each
layer C-order into 64-bit words, little-endian bit order within each word.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DuplicateTaskError,
    MaskConsistencyError,
    ShapeMismatchError,
)
from .nn.arch import Architecture, BnParams, ParamStore, init_params


# --- basic algebra ---------------------------------------------------------

def _check_congruent(a, b):
    if len(a) != len(b):
        raise ShapeMismatchError(f"masks cover {len(a)} vs {len(b)} layers")
    for l, (x, y) in enumerate(zip(a, b)):
        if x.shape != y.shape:
            raise ShapeMismatchError(f"layer {l}: mask shapes {x.shape} vs {y.shape}")


def mask_union(a, b):
    _check_congruent(a, b)
    return [x | y for x, y in zip(a, b)]


def mask_intersect(a, b):
    _check_congruent(a, b)
    return [x & y for x, y in zip(a, b)]


def mask_diff(a, b):
    _check_congruent(a, b)
    return [x & ~y for x, y in zip(a, b)]


def mask_complement(a):
    return [~x for x in a]


def mask_copy(a):
    return [x.copy() for x in a]


def popcount(a) -> int:
    return int(sum(int(np.count_nonzero(x)) for x in a))


def masks_equal(a, b) -> bool:
    return len(a) == len(b) and all(
        x.shape == y.shape and bool(np.array_equal(x, y)) for x, y in zip(a, b)
    )


def pack_bits(mask) -> bytes:
    """Pack one layer list into u64 words, little-endian bit order within words."""
    flat = np.concatenate([np.asarray(m, dtype=bool).ravel() for m in mask])
    packed = np.packbits(flat, bitorder="little")
    pad = (-len(packed)) % 8
    if pad:
        packed = np.concatenate([packed, np.zeros(pad, dtype=np.uint8)])
    return packed.view("<u8").tobytes()


def unpack_bits(data: bytes, shapes) -> list:
    words = np.frombuffer(data, dtype="<u8")
    bits = np.unpackbits(words.view(np.uint8), bitorder="little")
    out, pos = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        out.append(bits[pos : pos + size].astype(bool).reshape(shape))
        pos += size
    return out


# --- architecture-shaped constructors --------------------------------------

def full_weight_mask(arch: Architecture):
    return [np.ones(arch.weight_shape(l), dtype=bool) for l in range(arch.n_maskable)]


def empty_weight_mask(arch: Architecture):
    return [np.zeros(arch.weight_shape(l), dtype=bool) for l in range(arch.n_maskable)]


def full_neuron_mask(arch: Architecture):
    return [np.ones(d, dtype=bool) for d in arch.hidden_dims]


def active_counts(arch: Architecture, neuron_mask) -> list[int]:
    """Active neuron count per layer boundary 0..L, input/output always full."""
    counts = [arch.layer_dims[0]]
    for h, d in enumerate(arch.hidden_dims):
        counts.append(d if neuron_mask is None else int(np.count_nonzero(neuron_mask[h])))
    counts.append(arch.layer_dims[-1])
    return counts


def region_mask(arch: Architecture, neuron_mask):
    """Boolean weight region allowed by a neuron mask: both endpoints active."""
    if neuron_mask is None:
        return full_weight_mask(arch)
    region = []
    for l in range(arch.n_maskable):
        out_active = (
            np.ones(arch.layer_dims[l + 1], dtype=bool)
            if l + 1 > arch.n_hidden
            else neuron_mask[l]
        )
        in_active = (
            np.ones(arch.layer_dims[l], dtype=bool) if l == 0 else neuron_mask[l - 1]
        )
        region.append(np.outer(out_active, in_active))
    return region


def check_weight_neuron_consistency(arch: Architecture, neuron_mask, weight_mask):
    """Raise unless every set weight connects two active neurons."""
    region = region_mask(arch, neuron_mask)
    for l, (w, r) in enumerate(zip(weight_mask, region)):
        stray = int(np.count_nonzero(w & ~r))
        if stray:
            raise MaskConsistencyError(
                f"layer {l}: {stray} weights touch inactive neurons"
            )


def check_connectivity(arch: Architecture, neuron_mask):
    """Raise unless every hidden layer keeps at least one active neuron."""
    if neuron_mask is None:
        return
    for h, m in enumerate(neuron_mask):
        if not m.any():
            raise MaskConsistencyError(f"hidden layer {h} has no active neurons")


# --- the supernet ----------------------------------------------------------

@dataclass
class TaskMask:
    neurons: list
    weights: list


@dataclass
class SupernetState:
    """Single shared parameter store plus per-task masks, BN banks, and heads.

    ``m_all`` is the union of committed weight masks; its complement is the
    free set a new task may train.  ``used_neurons`` accumulates each task's
    active hidden neurons and drives per-neuron bias freezing.
    """

    arch: Architecture
    params: ParamStore
    task_masks: dict = field(default_factory=dict)
    bn_banks: dict = field(default_factory=dict)
    heads: dict = field(default_factory=dict)
    task_meta: dict = field(default_factory=dict)
    m_all: list = None
    used_neurons: list = None

    def __post_init__(self):
        if self.m_all is None:
            self.m_all = empty_weight_mask(self.arch)
        if self.used_neurons is None:
            self.used_neurons = [np.zeros(d, dtype=bool) for d in self.arch.hidden_dims]

    @property
    def free_mask(self):
        return mask_complement(self.m_all)

    @property
    def total_weights(self) -> int:
        return self.arch.total_weights

    @property
    def used_weights(self) -> int:
        return popcount(self.m_all)

    @property
    def task_ids(self) -> list:
        return list(self.task_masks.keys())

    def trainable_bias_masks(self):
        """Per-layer bias trainability under per-neuron freezing.

        A hidden neuron's bias freezes once any committed task uses that
        neuron; output biases of a shared head freeze once any task exists.
        A private per-task head keeps its own bias and is always trainable.
        """
        out = []
        any_task = bool(self.task_masks)
        for l in range(self.arch.n_layers):
            d_out = self.arch.layer_dims[l + 1]
            if l < self.arch.n_hidden:
                out.append(~self.used_neurons[l])
            elif self.arch.head_kind == "per_task_linear_sigmoid":
                out.append(np.ones(d_out, dtype=bool))
            else:
                out.append(np.zeros(d_out, dtype=bool) if any_task else np.ones(d_out, dtype=bool))
        return out

    def copy(self) -> "SupernetState":
        return SupernetState(
            arch=self.arch,
            params=self.params.copy(),
            task_masks={
                t: TaskMask(mask_copy(m.neurons), mask_copy(m.weights))
                for t, m in self.task_masks.items()
            },
            bn_banks={t: b.copy() for t, b in self.bn_banks.items()},
            heads={t: (w.copy(), b.copy()) for t, (w, b) in self.heads.items()},
            task_meta={t: dict(m) for t, m in self.task_meta.items()},
            m_all=mask_copy(self.m_all),
            used_neurons=[u.copy() for u in self.used_neurons],
        )


def new_supernet(arch: Architecture, seed: int, dtype=np.float32) -> SupernetState:
    """Fresh supernet: all weights free, no tasks, params seeded for replay."""
    return SupernetState(arch=arch, params=init_params(arch, seed, dtype=dtype))


def commit_task(
    state: SupernetState,
    task_id,
    neuron_mask,
    weight_mask,
    bn: BnParams,
    head=None,
    meta=None,
):
    """Record a finished task and fold its weights into the frozen set."""
    if task_id in state.task_masks:
        raise DuplicateTaskError(f"task {task_id!r} already committed")
    check_connectivity(state.arch, neuron_mask)
    check_weight_neuron_consistency(state.arch, neuron_mask, weight_mask)
    state.task_masks[task_id] = TaskMask(mask_copy(neuron_mask), mask_copy(weight_mask))
    state.bn_banks[task_id] = bn.copy()
    if head is not None:
        state.heads[task_id] = (head[0].copy(), head[1].copy())
    state.task_meta[task_id] = dict(meta or {})
    state.m_all = mask_union(state.m_all, weight_mask)
    for h in range(state.arch.n_hidden):
        state.used_neurons[h] |= neuron_mask[h]
    return state
