"""Deterministic, named random streams.

Every random quantity in the package flows from an integer seed plus a
string label (and an optional index). Streams are backed by the Philox
counter-based bit generator seeded through ``np.random.SeedSequence``,
so replays are stable across platforms and process counts. Labels are
hashed with SHA-256, not Python's salted ``hash``.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_entropy(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, label: str, index: int = 0) -> np.random.Generator:
    """Return the generator for (seed, label, index)."""
    ss = np.random.SeedSequence([int(seed), _label_entropy(label), int(index)])
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, label: str, index: int = 0) -> int:
    """Derive a decorrelated integer sub-seed from (seed, label, index)."""
    ss = np.random.SeedSequence([int(seed), _label_entropy(label), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])
