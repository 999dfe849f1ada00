"""Seeding and input-validation helpers shared by the estimators."""

from __future__ import annotations

import hashlib

import numpy as np


def make_rng(seed) -> np.random.Generator:
    """Return a Philox-backed generator.

    Philox is counter based, so a given seed yields the same stream on every
    platform. Passing an existing ``Generator`` returns it unchanged.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        seed = 0
    return np.random.Generator(np.random.Philox(int(seed)))


def mix_seed(*parts) -> int:
    """Hash arbitrary printable parts into an unsigned 63-bit seed.

    Uses BLAKE2b over the ``|``-joined ``str`` of each part, which is stable
    across platforms and Python versions.
    """
    payload = "|".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def check_structures(X, name="X"):
    """Coerce ``X`` to a list of :class:`~matwheel.data.CrystalStructure`.

    Accepts structures or property records (their structures are taken).
    """
    from .data import CrystalStructure, PropertyRecord

    out = []
    for i, item in enumerate(X):
        if isinstance(item, PropertyRecord):
            item = item.structure
        if not isinstance(item, CrystalStructure):
            raise TypeError(f"{name}[{i}] is {type(item).__name__}, expected CrystalStructure")
        out.append(item)
    return out


def check_targets(y, n, name="y"):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != n:
        raise ValueError(f"{name} has {y.shape[0]} entries, expected {n}")
    if not np.all(np.isfinite(y)):
        raise ValueError(f"{name} contains non-finite values")
    return y
