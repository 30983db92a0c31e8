"""Deterministic Bloom filters over canonical value encodings.

Membership probes use double hashing derived from a single keyed blake2b
digest, so filters built from the same values are byte-identical across
runs and platforms.  False negatives are impossible by construction.
"""

from __future__ import annotations

import hashlib
import math
import struct
from typing import Iterable

__all__ = ["BloomFilter", "value_to_bytes"]

_PERSON = b"seqbound"


def value_to_bytes(value: float | str) -> bytes:
    """Canonical byte encoding of a filter value.

    Numeric values are encoded as their IEEE-754 double bits, text as
    UTF-8; a kind prefix keeps the two spaces disjoint.
    """
    if isinstance(value, str):
        return b"t:" + value.encode("utf-8")
    return b"n:" + struct.pack("<d", float(value))


def _hash_pair(item: bytes) -> tuple[int, int]:
    digest = hashlib.blake2b(item, digest_size=16, person=_PERSON).digest()
    return (
        int.from_bytes(digest[:8], "little"),
        int.from_bytes(digest[8:], "little"),
    )


class BloomFilter:
    """Fixed-size bit array with k double-hashed probe positions per item."""

    __slots__ = ("num_bits", "num_hashes", "bits")

    def __init__(self, num_bits: int, num_hashes: int, bits: bytes | bytearray | None = None):
        if num_bits < 1 or num_hashes < 1:
            raise ValueError("num_bits and num_hashes must be positive")
        self.num_bits = int(num_bits)
        self.num_hashes = int(num_hashes)
        nbytes = (self.num_bits + 7) // 8
        if bits is None:
            self.bits = bytearray(nbytes)
        else:
            if len(bits) != nbytes:
                raise ValueError("bit array length does not match num_bits")
            self.bits = bytearray(bits)

    @classmethod
    def build(cls, items: Iterable[bytes], bits_per_item: int) -> "BloomFilter":
        pool = list(items)
        num_bits = max(8, bits_per_item * len(pool))
        num_hashes = max(1, round(math.log(2) * bits_per_item))
        bf = cls(num_bits, num_hashes)
        for item in pool:
            bf.add(item)
        return bf

    def _positions(self, item: bytes) -> Iterable[int]:
        h1, h2 = _hash_pair(item)
        h2 %= self.num_bits
        if h2 == 0:
            h2 = 1
        for j in range(self.num_hashes):
            yield (h1 + j * h2) % self.num_bits

    def add(self, item: bytes) -> None:
        for pos in self._positions(item):
            self.bits[pos >> 3] |= 1 << (pos & 7)

    def __contains__(self, item: bytes) -> bool:
        return all(self.bits[pos >> 3] & (1 << (pos & 7)) for pos in self._positions(item))

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, BloomFilter)
            and self.num_bits == other.num_bits
            and self.num_hashes == other.num_hashes
            and self.bits == other.bits
        )

    def __repr__(self) -> str:
        return "BloomFilter(bits=%d, hashes=%d)" % (self.num_bits, self.num_hashes)
