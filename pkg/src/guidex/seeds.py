"""Stable RNG derivation: every sampling decision hangs off a sha256 of its
labelled context, so runs are reproducible across processes and platforms."""

from __future__ import annotations

import hashlib
import random


def derive_seed(*parts: object) -> int:
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(*parts: object) -> random.Random:
    return random.Random(derive_seed(*parts))
