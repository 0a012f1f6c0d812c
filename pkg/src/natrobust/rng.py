"""Keyed, counter-based random streams.

Each stream is a Philox4x64-10 generator whose 128-bit key is the BLAKE2b
digest of its identifying parts (master seed, frame id, family, severity...).
Streams are therefore independent of evaluation order and worker count, and
numpy guarantees Philox output is identical across platforms.
"""

import hashlib

import numpy as np


def stream_key(*parts) -> int:
    h = hashlib.blake2b(digest_size=16)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def keyed_stream(*parts) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(*parts)))


def keyed_uniform(*parts) -> float:
    """A single uniform draw in [0, 1) determined entirely by ``parts``."""
    return (stream_key(*parts) >> 75) / float(1 << 53)
