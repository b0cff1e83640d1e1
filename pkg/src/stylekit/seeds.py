"""Counter-based random stream derivation.

Every stochastic operation in the toolkit draws from a stream derived from
(seed, context), where the context is a sequence of labels and counters such
as ("token", sample_index) or ("kmeans", restart_index). Streams for distinct
contexts are statistically independent, so batches can be produced in any
order, or concurrently, without changing any individual draw.
"""

from __future__ import annotations

import hashlib

import numpy as np

_SEP = b"\x1f"


def derive_key(seed: int, *context) -> int:
    """128-bit Philox key from a seed plus hashable context parts."""
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for part in context:
        h.update(_SEP)
        h.update(str(part).encode())
    return int.from_bytes(h.digest()[:16], "little")


def derive_rng(seed: int, *context) -> np.random.Generator:
    """Independent generator for (seed, context)."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *context)))
