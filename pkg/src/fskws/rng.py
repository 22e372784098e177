"""Named random streams derived from one master seed.

Every consumer of randomness (dataset synthesis, episode sampling per
phase, weight init, background mixing) gets its own counter-keyed child of
the master seed, so extending or reordering one stream's consumption can
never perturb another. Streams are stable across platforms and runs.
"""

from __future__ import annotations

import numpy as np

_STREAM_IDS = {
    "dataset.balance": 0,
    "dataset.split_core": 1,
    "dataset.split_unknown": 2,
    "dataset.silence": 3,
    "trainer.init": 10,
    "trainer.episodes.train": 11,
    "trainer.episodes.val": 12,
    "trainer.episodes.test": 13,
    "trainer.augment.train": 14,
    "trainer.augment.eval": 15,
}


def stream(master_seed: int, name: str) -> np.random.Generator:
    """A generator for one named stream of the master seed."""
    try:
        key = _STREAM_IDS[name]
    except KeyError:
        raise KeyError(f"unknown rng stream {name!r}; add it to _STREAM_IDS") from None
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed, spawn_key=(key,)))
