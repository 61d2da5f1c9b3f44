"""Seed derivation and canonical serialization helpers.

All randomness in the package flows from a single user seed through
`child_rng(seed, label)`: the label is hashed (CRC-32) into the spawn key
of a numpy SeedSequence, and every generator is PCG64. This keeps stages
independent (adding a draw in one stage never shifts another) and makes
runs reproducible across platforms.
"""

from __future__ import annotations

import hashlib
import json
import zlib

import numpy as np


def child_seed(seed: int, *labels: str | int) -> np.random.SeedSequence:
    """Derive a named SeedSequence from the run seed and a label path."""
    key = tuple(
        zlib.crc32(str(part).encode("utf-8")) if isinstance(part, str) else int(part)
        for part in labels
    )
    return np.random.SeedSequence(entropy=int(seed), spawn_key=key)


def child_rng(seed: int, *labels: str | int) -> np.random.Generator:
    """PCG64 generator for one named stage of the pipeline."""
    return np.random.default_rng(child_seed(seed, *labels))


def canonical_json(obj) -> str:
    """Stable JSON encoding: sorted keys, no whitespace drift."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_digest(obj) -> str:
    """Short stable digest of a JSON-serializable configuration."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:12]
