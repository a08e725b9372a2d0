"""Deterministic seed-stream splitting.

``SeedSequence.spawn`` mutates its parent, so reusing one parent would hand
out different children on the second call.  These helpers derive children
from ``(entropy, spawn_key)`` directly instead.
"""
from __future__ import annotations

import numpy as np

STREAMS = ("geometry", "fading", "activity", "signal", "noise")


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def child(seed, *key: int) -> np.random.SeedSequence:
    ss = as_seed_sequence(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(key))


def children(seed, n: int) -> list[np.random.SeedSequence]:
    return [child(seed, i) for i in range(n)]


def trial_streams(root_seed, trial: int, fixed_geometry: bool = False) -> dict[str, np.random.SeedSequence]:
    """Named streams for one Monte-Carlo trial.

    With ``fixed_geometry`` the geometry stream ignores the trial index.
    """
    trial_ss = child(root_seed, trial)
    streams = dict(zip(STREAMS, children(trial_ss, len(STREAMS))))
    if fixed_geometry:
        streams["geometry"] = child(root_seed, 2**31 - 1, 0)
    return streams
