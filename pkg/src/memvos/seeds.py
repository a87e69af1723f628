"""Seed discipline for every random weight family in the pipeline.

Each family draws from its own SeedSequence spawn key, so toggling or
reconfiguring one component never shifts the random stream of another.
"""

from __future__ import annotations

import numpy as np

_FAMILY_IDS = {
    "embedder": 0,
    "stm": 1,
    "neck": 2,
    "context": 3,
    "gate": 4,
    "decoder": 5,
    "ensemble": 6,
}


def rng_for(seed: int, family: str, *extra: int) -> np.random.Generator:
    """Generator for one weight family; `extra` subdivides a family (e.g. per stride)."""
    key = (_FAMILY_IDS[family], *extra)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))
