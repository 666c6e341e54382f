"""Seeded random substreams for the Monte Carlo oracles.

Every estimate is a sum of per-block counts. Block ``b`` of oracle ``name``
draws from ``SeedSequence(seed, spawn_key=(tag(name), b))``, so the result
does not depend on how blocks are spread over workers.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

BLOCK_SIZE = 1 << 17


def stream_tag(name: str) -> int:
    return zlib.crc32(name.encode())


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(stream_tag(name), *map(int, keys)))
    return np.random.Generator(np.random.PCG64(ss))


def blocked_count(
    seed: int,
    name: str,
    n_samples: int,
    count_block: Callable[[np.random.Generator, int], np.ndarray],
    workers: int = 1,
) -> np.ndarray:
    """Sum ``count_block(rng, size)`` over fixed-size blocks of ``n_samples``.

    ``count_block`` returns an integer array of hit counts; the sums are
    bitwise identical for any ``workers``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    sizes = [BLOCK_SIZE] * (n_samples // BLOCK_SIZE)
    if n_samples % BLOCK_SIZE:
        sizes.append(n_samples % BLOCK_SIZE)

    def run(b):
        return np.asarray(count_block(substream(seed, name, b), sizes[b]), dtype=np.int64)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(b) for b in range(len(sizes))]
    return np.sum(parts, axis=0)
