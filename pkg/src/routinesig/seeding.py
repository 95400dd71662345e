"""Labeled sub-seed derivation.

All randomness in the package flows from one root seed. Sub-streams are
derived from (seed, label, label, ...) so that independent pieces of work
(restarts, participants, sweep cells) get decorrelated, reproducible
generators regardless of execution order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_int(label: object) -> int:
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(seed: int, *labels: object) -> np.random.Generator:
    """Deterministic generator for the sub-stream named by `labels`."""
    entropy = [int(seed)] + [_label_int(l) for l in labels]
    return np.random.default_rng(np.random.SeedSequence(entropy))
