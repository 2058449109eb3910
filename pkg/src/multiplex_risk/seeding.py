"""Seed derivation: every random stream is a pure function of the master seed."""
from __future__ import annotations

import hashlib

_MASK = (1 << 64) - 1


def child_seed(master_seed: int, module: str, index: int = 0) -> int:
    """64-bit seed from ``blake2b(master_seed, module, index)``.

    Stable across platforms and Python versions, so partial re-runs of the
    pipeline see the same random streams as full runs.
    """
    payload = f"{int(master_seed) & _MASK}:{module}:{int(index)}".encode()
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little")
