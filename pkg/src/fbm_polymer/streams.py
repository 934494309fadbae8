"""
Counter-based random streams.

A StreamKey names one independent random stream by a 64-bit seed and a
path of integer keys. Streams are derived with numpy's SeedSequence spawn
keys and fed to a Philox generator, so the numbers a replica or a site
receives depend only on its key, never on the order in which work runs.
"""

import hashlib
from typing import Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import DomainError

StreamLabel = Union[int, str]

MAX_SEED = 2**64 - 1


def label_key(label: StreamLabel) -> int:
    """
    Map a stream label to a non-negative integer key.

    Raises:
        DomainError: For negative integer labels; signed values go through
            zigzag first, as site_key does
    """
    if isinstance(label, str):
        return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:4], "big")
    if label < 0:
        raise DomainError(f"stream labels must be non-negative, got {label}")
    return int(label)


def zigzag(value: int) -> int:
    """Interleave signed integers onto the naturals (0, -1, 1, -2, ...)."""
    return 2 * value if value >= 0 else -2 * value - 1


def site_key(site: Sequence[int]) -> Tuple[int, ...]:
    """Stream keys for a lattice site."""
    return tuple(zigzag(int(coordinate)) for coordinate in site)


class StreamKey(BaseModel):
    """Address of one reproducible random stream."""

    model_config = ConfigDict(frozen=True)

    seed: int = Field(default=0, ge=0, le=MAX_SEED)
    path: Tuple[int, ...] = ()

    def child(self, *labels: StreamLabel) -> "StreamKey":
        """Return the sub-stream addressed by extending the key path."""
        return StreamKey(seed=self.seed, path=self.path + tuple(label_key(label) for label in labels))

    def generator(self) -> np.random.Generator:
        """Build the Philox generator for this key."""
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(sequence))

    def replicas(self, count: int) -> Tuple["StreamKey", ...]:
        """Keys for replicas 0..count-1."""
        return tuple(self.child(index) for index in range(count))
