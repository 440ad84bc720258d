"""Deterministic random substreams derived from a single master seed.

Every random draw in the package goes through `stream(seed, *path)` so that
one integer seed pins the whole run. Path components may be small integers
(dataset pair indices, epoch numbers) or short names ("init", "epoch");
names are hashed to fixed integers so the derivation is stable across runs.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _component(part) -> int:
    if isinstance(part, (int, np.integer)):
        value = int(part)
        if value < 0:
            raise ValueError(f"stream path components must be non-negative, got {value}")
        return value
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def stream(seed: int, *path) -> np.random.Generator:
    """Independent generator for (seed, path); same arguments, same draws."""
    key = tuple(_component(part) for part in path)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
