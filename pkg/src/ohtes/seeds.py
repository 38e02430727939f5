"""Deterministic random-stream derivation from one master seed.

Every consumer of randomness (network init, environment resets, exploration
noise, batch sampling, tuner draws, evaluation, meta batches) gets its own
PCG64 stream derived as ``SeedSequence(master, spawn_key=(STREAM_ID, *key))``.
Streams are statistically independent, so consuming one never perturbs the
draws of another.
"""

from __future__ import annotations

import numpy as np

STREAM_IDS = {
    "init": 0,
    "env": 1,
    "explore": 2,
    "batch": 3,
    "tuner": 4,
    "eval": 5,
    "meta": 6,
    "warmup": 7,
}


def stream_seq(master_seed: int, name: str, *key: int) -> np.random.SeedSequence:
    """Seed sequence for the named stream, optionally sub-keyed (round, member, ...)."""
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(STREAM_IDS[name], *key))


def stream_gen(master_seed: int, name: str, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(stream_seq(master_seed, name, *key)))


def stream_int(master_seed: int, name: str, *key: int) -> int:
    """A 63-bit integer seed drawn from the named stream (for env resets)."""
    return int(stream_gen(master_seed, name, *key).integers(0, 2**63))
