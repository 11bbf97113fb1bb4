"""Seed derivation: every random draw traces back to one master seed."""
from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(master: int, *path: object) -> int:
    """Hash a master seed and a derivation path into a 64-bit seed."""
    text = repr((int(master) & MASK64,) + tuple(str(p) for p in path))
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


def rng_from(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & MASK64))


class SeedLedger:
    """Records which seed was derived for which purpose."""

    def __init__(self, master: int):
        self.master = int(master) & MASK64
        self.records: list[tuple[str, int]] = []

    def seed(self, *path: object) -> int:
        s = derive_seed(self.master, *path)
        self.records.append(("/".join(str(p) for p in path), s))
        return s
