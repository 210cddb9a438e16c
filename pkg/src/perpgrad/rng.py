"""Seeded PCG64 streams.

Every seed owns one ``SeedSequence``; named sub-streams (data, init, shuffle,
corruption, ...) are derived from it by hashing the name into the spawn key,
so adding a new stream never perturbs existing ones.
"""
import hashlib

import numpy as np


def _key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")


def stream(seed: int, name: str = "") -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_key(name),) if name else ())
    return np.random.Generator(np.random.PCG64(ss))
