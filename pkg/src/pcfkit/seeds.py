"""Deterministic seed derivation for independent random substreams.

Every consumer of randomness gets its own stream, derived from the master
seed and a label path. Streams are stable across runs and independent of
execution order, which is what makes concurrent trials replayable.
"""

from __future__ import annotations

import hashlib
import random


def derive_seed(master: int, *labels) -> int:
    """Stable 64-bit sub-seed for the given label path."""
    blob = ":".join([str(int(master)), *[str(x) for x in labels]])
    digest = hashlib.sha256(blob.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def make_rng(master: int, *labels) -> random.Random:
    return random.Random(derive_seed(master, *labels))
