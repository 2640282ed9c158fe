"""Deterministic random-number streams for reproducible Monte Carlo.

Every stochastic operation draws from a Philox counter-based generator
keyed on (global_seed, label, point_index).  Batches within one stream
advance the counter by a fixed stride, so results depend only on the
seed and the batch partition, never on thread count or evaluation order.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Counter advance per batch; generous so batches can never overlap.
_BATCH_STRIDE = 1 << 64


def _fnv1a(text: str) -> int:
    h = 1469598103934665603
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 1099511628211) & _MASK64
    return h


def _splitmix(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def stream_key(seed: int, label: str, index: int = 0) -> list[int]:
    """Two 64-bit Philox key words for one named stream."""
    return [int(seed) & _MASK64, _splitmix(_fnv1a(label) ^ _splitmix(index))]


def stream(seed: int, label: str, index: int = 0, batch: int = 0) -> np.random.Generator:
    """Return the generator for one (label, index) stream at a given batch."""
    bg = np.random.Philox(key=stream_key(seed, label, index))
    if batch:
        bg.advance(batch * _BATCH_STRIDE)
    return np.random.Generator(bg)
