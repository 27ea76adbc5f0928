"""Seeded random streams.

Every random operation in the package takes a single integer seed.  Streams for
sub-components are derived from ``(seed, label, ...)`` through
:class:`numpy.random.SeedSequence` and drive a counter-based Philox generator,
so two experiments that share a seed and a label see identical randomness no
matter what else ran before them.
"""
from __future__ import annotations

import zlib

import numpy as np


def _label_key(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf8"))


def stream(seed: int, *labels) -> np.random.Generator:
    """Generator for the sub-stream ``labels`` of experiment ``seed``."""
    if seed is None:
        raise ValueError("an explicit integer seed is required")
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1),
                                spawn_key=tuple(_label_key(l) for l in labels))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(seed, *labels) -> np.random.Generator:
    """Pass generators through untouched, derive a stream from integer seeds."""
    if isinstance(seed, np.random.Generator):
        return seed
    return stream(seed, *labels)


def child_seed(seed: int, *labels) -> int:
    """A derived 63-bit integer seed (for handing to other seeded functions)."""
    return int(stream(seed, "child", *labels).integers(0, 2**63 - 1))
