"""Named random sub-streams derived from one run seed.

Each consumer asks for ``stream(seed, name, *indices)``; the result depends only
on those arguments, so e.g. the rollout noise of epoch 7 is the same whether or
not evaluation sampling happened in between, and resuming from a checkpoint
only needs the seed and epoch counter.
"""

from __future__ import annotations

import os
import zlib

import numpy as np


def stream(seed: int, name: str, *indices: int) -> np.random.Generator:
    key = (zlib.crc32(name.encode()),) + tuple(int(i) for i in indices)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def thread_cap() -> int:
    """Rollout parallelism from ``DAGPO_THREADS`` (default 1)."""
    raw = os.environ.get("DAGPO_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"DAGPO_THREADS must be an integer, got {raw!r}") from None
