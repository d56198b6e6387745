"""Seeded random streams.

Every random draw in the package comes from a ``SeedSpec``. A stream is fully
determined by ``(master_seed, stream_index, *sub)``, so work split into chunks
or trials reproduces bit-for-bit regardless of how it is scheduled.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

_U64 = 2**64


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    stream_index: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_index"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise TypeError(f"{name} must be an integer, got {type(v).__name__}")
            if not 0 <= int(v) < _U64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {v}")

    def generator(self, *sub: int) -> np.random.Generator:
        """Generator for this stream, optionally for a sub-stream ``sub``."""
        ss = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(self.stream_index), *map(int, sub)))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, index: int) -> "SeedSpec":
        """Independent stream derived from this one (used for per-trial streams)."""
        mixed = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(self.stream_index), 0xC0FFEE, int(index)))
        return SeedSpec(self.master_seed, int(mixed.generate_state(2, np.uint64)[0]))


def as_seed(seed) -> SeedSpec:
    if isinstance(seed, SeedSpec):
        return seed
    return SeedSpec(int(seed), 0)


def resolve_threads(threads: int | None = None) -> int:
    """Worker count: explicit value, else ``PACB_THREADS``, else available CPUs."""
    if threads is None:
        env = os.environ.get("PACB_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    if threads < 1:
        raise ValueError(f"thread count must be >= 1, got {threads}")
    return int(threads)


def ordered_map(fn, items, threads: int | None = None) -> list:
    """``[fn(x) for x in items]`` evaluated on a thread pool; results keep input order."""
    items = list(items)
    n = min(resolve_threads(threads), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
