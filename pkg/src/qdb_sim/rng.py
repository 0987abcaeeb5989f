"""Named, seedable RNG streams.

Every random draw in a simulation comes from a stream identified by a label
(one per party, one per quantum registry, one per adversary, ...).  Stream
seeds are derived from the master seed by hashing ``"<master>/<label>"`` with
SHA-256 and taking the first 8 bytes, so trials are bit-reproducible and
streams are statistically independent of each other.
"""

from __future__ import annotations

import hashlib
import random


def stream_seed(master_seed: int, label: str) -> int:
    """Derive a 64-bit stream seed from the master seed and a label."""
    material = f"{master_seed}/{label}".encode()
    digest = hashlib.sha256(material).digest()
    return int.from_bytes(digest[:8], "big")


def stream(master_seed: int, label: str) -> random.Random:
    """A dedicated ``random.Random`` for the given stream label."""
    return random.Random(stream_seed(master_seed, label))


def trial_stream(master_seed: int, trial: int, label: str) -> random.Random:
    """Stream for one named consumer inside one trial."""
    return stream(master_seed, f"trial{trial}/{label}")
