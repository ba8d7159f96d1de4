"""Cluster-wide document addresses."""

from __future__ import annotations

from typing import NamedTuple

_SHARD_SHIFT = 48
_SEGMENT_SHIFT = 32
_ORDINAL_MASK = (1 << 32) - 1
_SMALL_MASK = (1 << 16) - 1


class GlobalDocId(NamedTuple):
    """(shard, segment, ordinal) address of a document within one index.

    Tuple ordering is the physical order of the log-structured store.
    """

    shard: int
    segment: int
    ordinal: int

    def encode(self) -> int:
        return encode(self)

    def __str__(self) -> str:
        return f"{self.shard}:{self.segment}:{self.ordinal}"


def encode(doc_id: GlobalDocId) -> int:
    """Pack into a 64-bit integer preserving the tuple order."""
    shard, segment, ordinal = doc_id
    return (shard << _SHARD_SHIFT) | (segment << _SEGMENT_SHIFT) | ordinal


def decode(value: int) -> GlobalDocId:
    value = int(value)
    return GlobalDocId(
        (value >> _SHARD_SHIFT) & _SMALL_MASK,
        (value >> _SEGMENT_SHIFT) & _SMALL_MASK,
        value & _ORDINAL_MASK,
    )


def parse(text: str) -> GlobalDocId:
    shard, segment, ordinal = (int(p) for p in text.split(":"))
    return GlobalDocId(shard, segment, ordinal)
