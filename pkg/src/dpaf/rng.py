"""Named, seeded random streams.

Each stream is a PCG64 generator seeded from ``SeedSequence(master_seed,
spawn_key=key)``, where string key parts are mapped to 32-bit integers via
SHA-256. PCG64 output is specified bit-for-bit across platforms, and keying
streams by name means that adding a new variable never shifts the draws of an
existing one.
"""

from __future__ import annotations

import hashlib

import numpy as np


def key_part(part: int | str) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream key integers must be non-negative")
        return int(part)
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def stream(master_seed: int, *key: int | str) -> np.random.Generator:
    """Return an independent generator for ``(master_seed, *key)``."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(key_part(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))


class Streams:
    """Lazily created named streams sharing one ``(master_seed, *prefix)``."""

    def __init__(self, master_seed: int, *prefix: int | str):
        self.master_seed = int(master_seed)
        self.prefix = prefix
        self._cache: dict[str, np.random.Generator] = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in self._cache:
            self._cache[name] = stream(self.master_seed, *self.prefix, name)
        return self._cache[name]
