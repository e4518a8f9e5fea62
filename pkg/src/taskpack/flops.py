"""Multiply-accumulate counting for a layered dense net under a neuron mask.

One MAC per applied weight; biases, batch-norm, and activations don't count.
Private per-task heads are excluded from the totals, shared heads included.
The count is a pure function of (architecture, neuron mask) — weight values
and weight masks never enter.
"""

from __future__ import annotations

from dataclasses import dataclass

from .masks import active_counts
from .nn.arch import Architecture


@dataclass(frozen=True)
class FlopReport:
    per_layer: tuple
    total: int
    max_flops: int
    fraction: float


def layer_flops(arch: Architecture, neuron_mask, layer: int) -> int:
    """MACs of one maskable weight layer: active inputs x active outputs."""
    counts = active_counts(arch, neuron_mask)
    return counts[layer] * counts[layer + 1]


def max_flops(arch: Architecture) -> int:
    return sum(layer_flops(arch, None, l) for l in range(arch.n_maskable))


def total_flops(arch: Architecture, neuron_mask) -> FlopReport:
    per_layer = tuple(
        layer_flops(arch, neuron_mask, l) for l in range(arch.n_maskable)
    )
    total = sum(per_layer)
    full = max_flops(arch)
    return FlopReport(per_layer, total, full, total / full)
