"""Deterministic seed derivation.

All randomness in the package flows from integer seeds through
:func:`numpy.random.default_rng`.  Two derivation rules are used:

* replicate streams: ``replicate_seed(master, i) = master XOR i``, so a run
  with more replicates extends an earlier run without disturbing the seeds
  of the replicates they share;
* named sub-streams: ``child_seed(master, *labels)`` hashes the label path
  into a :class:`numpy.random.SeedSequence` spawn key, giving independent,
  platform-stable streams for e.g. covariate sampling vs. outcome sampling.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 63) - 1


def replicate_seed(master: int, index: int) -> int:
    """Seed for replicate ``index`` of a study with the given master seed."""
    if index < 0:
        raise ValueError("replicate index must be nonnegative")
    return (int(master) ^ int(index)) & _MASK


def child_seed(master: int, *labels: str | int) -> int:
    """Derive a stable sub-stream seed from a master seed and a label path."""
    keys = []
    for label in labels:
        if isinstance(label, int):
            keys.append(label & _MASK)
        else:
            digest = hashlib.blake2b(str(label).encode(), digest_size=8).digest()
            keys.append(int.from_bytes(digest, "little") & _MASK)
    seq = np.random.SeedSequence(int(master) & _MASK, spawn_key=tuple(keys))
    return int(seq.generate_state(1, np.uint64)[0])


def rng_from(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) & _MASK)
