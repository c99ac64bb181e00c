"""Deterministic seed fan-out.

Every random draw in the package flows from a single master seed through
``derive_seed``. Streams are keyed by a purpose label (and an optional
index, e.g. the participant number), so adding a participant or phase never
perturbs the randomness of the others.
"""

from __future__ import annotations

import hashlib


def derive_seed(master: int, label: str, index: int | None = None) -> int:
    """Return a stable 63-bit seed for the stream named by (label, index)."""
    text = f"{master}:{label}" if index is None else f"{master}:{label}:{index}"
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1
