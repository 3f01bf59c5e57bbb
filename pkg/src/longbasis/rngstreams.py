"""Deterministic per-scenario random streams.

Every stochastic component draws from a Generator built out of
``SeedSequence(master_seed, spawn_key=...)``.  The spawn key encodes the
scenario index (and retry count), so results are identical no matter how
scenarios are scheduled across workers.
"""

from __future__ import annotations

import numpy as np


def master_stream(master_seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed)))


def child_stream(master_seed: int, *key: int) -> np.random.Generator:
    """Stream for one unit of work, e.g. child_stream(seed, scenario, retry)."""
    seq = np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))
