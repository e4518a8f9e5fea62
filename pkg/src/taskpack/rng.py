"""Replayable random streams.

Every stochastic component draws from a Philox counter-based bit generator
keyed by a ``(run_seed, task_id, purpose)`` triple, so any stream can be
re-created in isolation without replaying the run that produced it.  Philox
has a fixed, platform-independent update rule, which is what makes the
bit-reproducibility guarantees of the training engine possible.

Key derivation is a splitmix64 chain: the purpose string is hashed with
FNV-1a (64-bit) and the triple is folded into the 128-bit Philox key as
``s0 = mix(run_seed); s1 = mix(s0 ^ task_id); s2 = mix(s1 ^ fnv1a(purpose));
key = (s2, mix(s2))``.
"""

from __future__ import annotations

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def _fnv1a(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def task_key(task_id) -> int:
    """Stable integer key for arbitrary task ids (ints, strings, tuples)."""
    return _fnv1a(repr(task_id))


def stream(run_seed: int, task_id: int, purpose: str) -> np.random.Generator:
    """Return an independent generator for one (seed, task, purpose) triple."""
    s0 = _splitmix64(run_seed & _MASK64)
    s1 = _splitmix64(s0 ^ (task_id & _MASK64))
    s2 = _splitmix64(s1 ^ _fnv1a(purpose))
    key = np.array([s2, _splitmix64(s2)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
