"""Deterministic, splittable random streams.

Every stochastic component draws from a Philox counter-based generator keyed
by a user seed plus string/integer labels, so independent subsystems
(pose sampling, pixel noise, RANSAC hypothesis k, ...) get decorrelated
streams that are reproducible across runs, platforms and thread counts.

Algorithm (fixed; re-implementations must match): Philox4x64-10 seeded by a
``numpy.random.SeedSequence`` over ``[seed, h(label_0), h(label_1), ...]``
where ``h`` maps a string label to the first 8 bytes of its SHA-256 digest
(little-endian) and passes integers through unchanged.
"""

import hashlib

import numpy as np


def _label_word(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFFFFFFFFFF
    if isinstance(label, str):
        digest = hashlib.sha256(label.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"stream labels must be str or int, got {type(label)!r}")


def stream(seed: int, *labels) -> np.random.Generator:
    """Return an independent generator keyed by (seed, labels)."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    words.extend(_label_word(label) for label in labels)
    return np.random.Generator(np.random.Philox(seed=np.random.SeedSequence(words)))
