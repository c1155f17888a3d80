"""Named random substreams derived from one global seed.

Every consumer of randomness asks for a stream by label. Labels are hashed
into the seed sequence spawn key, so adding a new consumer never perturbs
the draws seen by existing ones, and the same (seed, label) pair always
yields the same stream.
"""

import hashlib

import numpy as np
from numpy.random import Generator, Philox, SeedSequence


def _label_key(label: str) -> tuple[int, ...]:
    """Hash a stream label into a stable spawn key of four 32-bit words."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[4 * i : 4 * i + 4], "little") for i in range(4))


def named_stream(seed: int, label: str) -> Generator:
    """Build the random stream identified by (seed, label).

    Args:
        seed: Global run seed.
        label: Name of the consumer, for example "eps_star" or "t1".

    Returns:
        A counter-based generator; identical inputs give identical streams.
    """
    ss = SeedSequence(entropy=int(seed), spawn_key=_label_key(label))
    return Generator(Philox(ss))


def array_hash(a: np.ndarray, digits: int = 12) -> str:
    """Short hex digest of an array's bytes, for logging identity checks."""
    buf = np.ascontiguousarray(a, dtype=np.float64).tobytes()
    return hashlib.sha256(buf).hexdigest()[:digits]


__all__ = ["named_stream", "array_hash"]
