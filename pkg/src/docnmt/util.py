"""Small shared helpers: seed derivation and file hashing."""

from __future__ import annotations

import hashlib
import zlib

import numpy as np


def sub_seed(master: int, name: str) -> list[int]:
    """Derive a named sub-seed so one CLI seed drives independent RNG streams."""
    return [int(master) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]


def seeded_rng(master: int, name: str) -> np.random.Generator:
    return np.random.default_rng(sub_seed(master, name))


def derive_seed(master: int, name: str) -> int:
    """Collapse a named sub-seed into one int for APIs that take a seed."""
    return int(seeded_rng(master, name).integers(2**31))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
