"""Seeded, splittable random streams keyed by (seed, record id, epoch, ...)."""

from __future__ import annotations

import zlib

import numpy as np
import torch


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; stable across runs and platforms."""
    return np.random.default_rng(np.random.SeedSequence([_key(seed), *(_key(k) for k in keys)]))


def torch_generator(seed: int, *keys) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(stream(seed, *keys).integers(0, 2**62)))
    return g
