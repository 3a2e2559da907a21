"""Small parameter helpers shared by the model modules."""

from __future__ import annotations

import zlib

import numpy as np

from himt.autodiff import Node, Parameter, add, matmul


def uniform_weight(rng: np.random.Generator, fan_in: int, fan_out: int, name: str) -> Parameter:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return Parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)), name)


def zero_bias(width: int, name: str) -> Parameter:
    return Parameter(np.zeros((1, width)), name)


def linear(x, w: Parameter, b: Parameter | None = None) -> Node:
    out = matmul(x, w)
    return out if b is None else add(out, b)


def stream(seed: int, label: str, *extra: int | str) -> np.random.Generator:
    """Independent RNG stream keyed by ``(seed, label, *extra)``.

    String keys are hashed with crc32 so streams are stable across runs and
    Python processes.
    """
    words = [int(seed) & 0xFFFFFFFF, zlib.crc32(label.encode())]
    for e in extra:
        words.append(zlib.crc32(e.encode()) if isinstance(e, str) else int(e) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(words))
