"""Counter-based random substreams keyed by (seed, protocol, ... , repetition)."""
from __future__ import annotations

import zlib

import numpy as np

STREAMS = {"init": 0, "force": 1, "detector": 2, "supply": 3, "aux": 4}


def key_of(name: str | int) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, *keys) -> np.random.Generator:
    """Independent Philox generator for the given key path.

    Adding keys (e.g. more repetitions) never changes the streams of
    existing key paths.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(key_of(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def rep_streams(seed: int, *keys) -> dict[str, np.random.Generator]:
    return {name: substream(seed, *keys, idx) for name, idx in STREAMS.items()}
