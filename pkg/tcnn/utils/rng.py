# tcnn/utils/rng.py
"""
Seeded random streams.

All randomness of a run flows from one integer seed: independent streams
(initialization, shuffling, augmentation, stochastic depth, probes) are spawned
from a single SeedSequence so that adding a consumer never shifts another.
"""
from typing import List

import numpy as np

STREAMS = ("init", "shuffle", "augment", "drop_path", "probe")


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the named child stream of `seed`."""
    if name not in STREAMS:
        raise KeyError(f"unknown random stream: {name}")
    children: List[np.random.SeedSequence] = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return np.random.default_rng(children[STREAMS.index(name)])
