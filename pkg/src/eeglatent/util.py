"""Shared plumbing: deterministic RNG derivation and error types."""

from __future__ import annotations

import zlib

import numpy as np


class DataError(ValueError):
    """An on-disk dataset, manifest, or label violates its contract."""


class ShapeError(ValueError):
    """A tensor shape disagrees with a declared contract."""


class ConfigError(ValueError):
    """A run configuration is malformed or contains unknown keys."""


def derive_rng(seed: int, *path) -> np.random.Generator:
    """Derive an independent, reproducible random stream from a root seed.

    Every consumer of randomness (splitting, weight init, dropout, latent
    sampling, generation, ...) names its stream with a path of strings and
    integers. A single root seed therefore fully determines all random
    behavior, while differently named streams stay statistically
    independent. Calling with the same (seed, path) always returns a
    generator producing the same sequence.
    """
    words = [int(seed) & 0xFFFFFFFF]
    for part in path:
        if isinstance(part, str):
            words.append(zlib.crc32(part.encode("utf-8")))
        else:
            words.append(int(part) & 0xFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))
