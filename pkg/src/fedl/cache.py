"""Semantic cache of semi-join results.

Entries map the canonical description of a semi-join subtree to the
bitset of parent documents it produced.  Each key carries the epoch of
every index the subtree reads; an entry is only served while all those
epochs are still current, so seals and merges retire it automatically.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

from .bitset import DocBitset

DEFAULT_BUDGET = 64 * 1024 * 1024
ENTRY_OVERHEAD = 64


@dataclass(frozen=True)
class SemanticKey:
    canonical: str
    epochs: tuple[tuple[str, int], ...]

    @classmethod
    def build(cls, canonical: str, epochs: Mapping[str, int]) -> "SemanticKey":
        return cls(canonical, tuple(sorted(epochs.items())))

    @property
    def indices(self) -> frozenset[str]:
        return frozenset(name for name, _ in self.epochs)

    def __str__(self) -> str:
        ep = ",".join(f"{n}@{e}" for n, e in self.epochs)
        return f"{self.canonical} [{ep}]"


@dataclass
class CacheEntry:
    key: SemanticKey
    value: DocBitset
    size: int
    last_access: int


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    evictions: int = 0
    oversize_skips: int = 0
    stale_purges: int = 0
    semi_joins_computed: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


EpochSource = Callable[[Iterable[str]], Mapping[str, int]]


class SemanticCache:
    """LRU cache bounded by bytes, keyed by :class:`SemanticKey`."""

    def __init__(self, epoch_source: EpochSource, budget_bytes: int = DEFAULT_BUDGET):
        self._current_epochs = epoch_source
        self.budget_bytes = budget_bytes
        self._entries: OrderedDict[str, CacheEntry] = OrderedDict()
        self._bytes = 0
        self._tick = 0
        self._lock = threading.RLock()
        self.stats = CacheStats()

    @classmethod
    def for_store(cls, store, budget_bytes: int = DEFAULT_BUDGET) -> "SemanticCache":
        return cls(lambda names: store.epochs(names), budget_bytes)

    @property
    def used_bytes(self) -> int:
        return self._bytes

    def __len__(self) -> int:
        return len(self._entries)

    def _is_current(self, key: SemanticKey) -> bool:
        current = self._current_epochs([n for n, _ in key.epochs])
        return all(current.get(n) == e for n, e in key.epochs)

    def _drop(self, canonical: str) -> None:
        entry = self._entries.pop(canonical)
        self._bytes -= entry.size

    def get(self, key: SemanticKey) -> DocBitset | None:
        with self._lock:
            entry = self._entries.get(key.canonical)
            if entry is None:
                self.stats.misses += 1
                return None
            if not self._is_current(entry.key):
                self._drop(key.canonical)
                self.stats.stale_purges += 1
                self.stats.misses += 1
                return None
            if entry.key.epochs != key.epochs:
                # reader holds an older snapshot than the cached entry
                self.stats.misses += 1
                return None
            self._tick += 1
            entry.last_access = self._tick
            self._entries.move_to_end(key.canonical)
            self.stats.hits += 1
            return entry.value

    def put(self, key: SemanticKey, value: DocBitset) -> bool:
        """Store ``value``; returns False when it was not cached."""
        size = value.nbytes + ENTRY_OVERHEAD + len(key.canonical)
        with self._lock:
            if size > self.budget_bytes:
                self.stats.oversize_skips += 1
                return False
            if not self._is_current(key):
                return False
            if key.canonical in self._entries:
                self._drop(key.canonical)
            while self._entries and self._bytes + size > self.budget_bytes:
                oldest = next(iter(self._entries))
                self._drop(oldest)
                self.stats.evictions += 1
            self._tick += 1
            self._entries[key.canonical] = CacheEntry(key, value, size, self._tick)
            self._bytes += size
            return True

    def invalidate(self, index_name: str) -> int:
        with self._lock:
            doomed = [c for c, e in self._entries.items() if index_name in e.key.indices]
            for c in doomed:
                self._drop(c)
            return len(doomed)

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()
            self._bytes = 0

    def record_computed(self, n: int = 1) -> None:
        with self._lock:
            self.stats.semi_joins_computed += n

    def keys(self) -> list[SemanticKey]:
        with self._lock:
            return [e.key for e in self._entries.values()]


def cache_get(cache: SemanticCache, key: SemanticKey) -> DocBitset | None:
    return cache.get(key)


def cache_put(cache: SemanticCache, key: SemanticKey, value: DocBitset) -> bool:
    return cache.put(key, value)


def invalidate(cache: SemanticCache, index_name: str) -> int:
    return cache.invalidate(index_name)
