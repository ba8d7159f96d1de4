"""Compressed sets of document IDs.

Roaring-style hybrid: the 64-bit encoded id space is split on its low
16 bits.  Each populated 65536-wide chunk is held either as a sorted
``uint16`` array (sparse chunks) or as a packed 8 KiB bitmap (dense
chunks).  Instances are immutable; set algebra returns new objects.
"""

from __future__ import annotations

from bisect import bisect_left
from typing import Iterable, Iterator

import numpy as np

from .docid import GlobalDocId, decode, encode

ARRAY_LIMIT = 4096
_BITMAP_BYTES = 65536 // 8
_CONTAINER_OVERHEAD = 16


def _lows_to_container(lows: np.ndarray):
    if len(lows) > ARRAY_LIMIT:
        dense = np.zeros(65536, dtype=bool)
        dense[lows] = True
        return ("bitmap", np.packbits(dense, bitorder="little"), len(lows))
    return ("array", lows.astype(np.uint16, copy=False), len(lows))


def _container_lows(container) -> np.ndarray:
    kind, data, _ = container
    if kind == "array":
        return data
    return np.flatnonzero(np.unpackbits(data, bitorder="little")).astype(np.uint16)


class DocBitset:
    """Immutable compressed set of :class:`GlobalDocId`."""

    __slots__ = ("_keys", "_containers", "_len")

    def __init__(self, containers: dict | None = None):
        containers = containers or {}
        self._keys = sorted(containers)
        self._containers = containers
        self._len = sum(c[2] for c in containers.values())

    @classmethod
    def from_ints(cls, values: Iterable[int]) -> "DocBitset":
        arr = np.fromiter((int(v) for v in values), dtype=np.uint64)
        return cls._from_array(arr)

    @classmethod
    def from_ids(cls, ids: Iterable[GlobalDocId]) -> "DocBitset":
        return cls.from_ints(encode(i) for i in ids)

    @classmethod
    def _from_array(cls, arr: np.ndarray) -> "DocBitset":
        if arr.size == 0:
            return cls()
        arr = np.unique(arr)
        highs = arr >> np.uint64(16)
        keys, starts = np.unique(highs, return_index=True)
        bounds = list(starts) + [len(arr)]
        containers = {}
        for i, key in enumerate(keys):
            lows = (arr[bounds[i]:bounds[i + 1]] & np.uint64(0xFFFF)).astype(np.uint16)
            containers[int(key)] = _lows_to_container(lows)
        return cls(containers)

    def __len__(self) -> int:
        return self._len

    def __bool__(self) -> bool:
        return self._len > 0

    def __contains__(self, item) -> bool:
        value = encode(item) if isinstance(item, tuple) else int(item)
        container = self._containers.get(value >> 16)
        if container is None:
            return False
        low = value & 0xFFFF
        kind, data, _ = container
        if kind == "array":
            # binary search, O(log n)
            pos = bisect_left(data, low)
            return pos < len(data) and int(data[pos]) == low
        return bool((int(data[low >> 3]) >> (low & 7)) & 1)

    def to_array(self) -> np.ndarray:
        """Encoded ids, ascending."""
        parts = []
        for key in self._keys:
            lows = _container_lows(self._containers[key]).astype(np.uint64)
            parts.append((np.uint64(key) << np.uint64(16)) | lows)
        if not parts:
            return np.zeros(0, dtype=np.uint64)
        return np.concatenate(parts)

    def ints(self) -> list[int]:
        return [int(v) for v in self.to_array()]

    def __iter__(self) -> Iterator[GlobalDocId]:
        for v in self.to_array():
            yield decode(int(v))

    def __and__(self, other: "DocBitset") -> "DocBitset":
        containers = {}
        for key in self._keys:
            theirs = other._containers.get(key)
            if theirs is None:
                continue
            lows = np.intersect1d(_container_lows(self._containers[key]), _container_lows(theirs),
                                  assume_unique=True)
            if len(lows):
                containers[key] = _lows_to_container(lows)
        return DocBitset(containers)

    def __or__(self, other: "DocBitset") -> "DocBitset":
        containers = dict(self._containers)
        for key, theirs in other._containers.items():
            mine = containers.get(key)
            if mine is None:
                containers[key] = theirs
            else:
                containers[key] = _lows_to_container(
                    np.union1d(_container_lows(mine), _container_lows(theirs)))
        return DocBitset(containers)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DocBitset):
            return NotImplemented
        return self._len == other._len and np.array_equal(self.to_array(), other.to_array())

    def __hash__(self):
        return hash((self._len, self.to_array().tobytes()))

    @property
    def nbytes(self) -> int:
        """Real storage footprint of the encoded containers."""
        total = 0
        for kind, data, _ in self._containers.values():
            total += _CONTAINER_OVERHEAD + (data.nbytes if kind == "array" else _BITMAP_BYTES)
        return total

    def container_kinds(self) -> dict[int, str]:
        return {k: self._containers[k][0] for k in self._keys}

    def __repr__(self) -> str:
        return f"DocBitset(len={self._len}, containers={len(self._keys)})"


EMPTY = DocBitset()
