"""Deterministic RNG streams derived from a single run seed.

Every random choice in the library flows from one user-facing seed through
named substreams, so runs reproduce exactly and substreams never alias.
Strings in the key are hashed with crc32 (process-independent, unlike
Python's salted hash()).
"""
from __future__ import annotations

import zlib

import numpy as np


def _as_ints(parts) -> list[int]:
    out = []
    for p in parts:
        if isinstance(p, (int, np.integer)):
            out.append(int(p) & 0xFFFFFFFFFFFFFFFF)
        elif isinstance(p, str):
            out.append(zlib.crc32(p.encode("utf-8")))
        else:
            raise TypeError(f"seed parts must be int or str, got {type(p)}")
    return out


def seed_sequence(*parts) -> np.random.SeedSequence:
    return np.random.SeedSequence(_as_ints(parts))


def rng(*parts) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(*parts)))
