"""Log-structured, sharded document store.

Documents are appended to a per-shard open segment and become visible to
readers once the segment is sealed.  Sealed segments are immutable: they
carry an exact-match term dictionary, a sorted numeric index and a column
store per field.  Readers go through a :class:`Snapshot` that pins the
segment lists at acquisition time.
"""

from __future__ import annotations

import hashlib
import threading
from bisect import bisect_left, bisect_right
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .bitset import EMPTY, DocBitset
from .docid import GlobalDocId, encode
from .filters import Filter, FilterError, Range, Term, is_numeric, normalize_value


class StorageError(Exception):
    pass


class DuplicateIndexError(StorageError):
    pass


class UnknownIndexError(StorageError, KeyError):
    pass


class SegmentStateError(StorageError):
    pass


class StaleHandleError(StorageError):
    """A GlobalDocId refers to a segment that is not part of the snapshot."""


class FieldTypeError(StorageError, TypeError):
    pass


@lru_cache(maxsize=1 << 18)
def stable_hash(value, salt: int = 0) -> int:
    """64-bit hash that is stable across processes and runs."""
    if value is None:
        data = b"n"
    elif isinstance(value, str):
        data = b"s" + value.encode("utf-8")
    elif isinstance(value, int):
        data = b"i" + str(value).encode()
    elif isinstance(value, float):
        data = b"f" + repr(value).encode()
    else:
        raise TypeError(f"cannot hash {type(value).__name__}")
    digest = hashlib.blake2b(data, digest_size=8, salt=salt.to_bytes(8, "little")).digest()
    return int.from_bytes(digest, "little")


def field_values(raw) -> tuple:
    """Normalized value tuple of a raw field (scalar or list)."""
    if raw is None:
        return ()
    if isinstance(raw, (list, tuple)):
        return tuple(normalize_value(v) for v in raw)
    return (normalize_value(raw),)


def value_kind(value) -> str:
    return "numeric" if is_numeric(value) else "text"


class Segment:
    """Immutable once sealed; built from an append buffer."""

    def __init__(self, segment_id: int, docs: Sequence[dict]):
        self.segment_id = segment_id
        self.docs: tuple[dict, ...] = tuple(docs)
        self.columns: dict[str, list[tuple]] = {}
        self.terms: dict[str, dict[object, list[int]]] = {}
        self.numeric: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.field_kinds: dict[str, set[str]] = defaultdict(set)
        self._build()

    def _build(self) -> None:
        n = len(self.docs)
        postings: dict[str, dict[object, list[int]]] = defaultdict(lambda: defaultdict(list))
        nums: dict[str, list[tuple[float, int]]] = defaultdict(list)
        for ordinal, doc in enumerate(self.docs):
            for name, raw in doc.items():
                values = field_values(raw)
                col = self.columns.get(name)
                if col is None:
                    col = self.columns[name] = [()] * n
                col[ordinal] = values
                seen = set()
                for v in values:
                    self.field_kinds[name].add(value_kind(v))
                    key = (v, is_numeric(v))
                    if key in seen:
                        continue
                    seen.add(key)
                    postings[name][_term_key(v)].append(ordinal)
                    if is_numeric(v):
                        nums[name].append((v, ordinal))
        self.terms = {f: dict(d) for f, d in postings.items()}
        for name, pairs in nums.items():
            pairs.sort()
            self.numeric[name] = (np.array([p[0] for p in pairs], dtype=np.float64),
                                  np.array([p[1] for p in pairs], dtype=np.int64))

    def __len__(self) -> int:
        return len(self.docs)


def _term_key(value):
    # text "5" and numeric 5 must not collide in the dictionary
    return ("n", value) if is_numeric(value) else ("s", value)


@dataclass
class _Shard:
    segments: list[Segment] = field(default_factory=list)
    open_docs: list[dict] = field(default_factory=list)
    open_segment_id: int = 0
    next_segment_id: int = 1


class Index:
    def __init__(self, name: str, shard_count: int, routing_field: str):
        self.name = name
        self.shard_count = shard_count
        self.routing_field = routing_field
        self.shards = [_Shard() for _ in range(shard_count)]
        self.epoch = 0
        # routing joins are exact only when no document has >1 routing value
        self.routing_multivalued = False

    def route(self, doc: Mapping) -> int:
        values = field_values(doc.get(self.routing_field))
        return self.route_value(values[0] if values else None)

    def route_value(self, value) -> int:
        return stable_hash(value) % self.shard_count

    @property
    def pending_count(self) -> int:
        return sum(len(s.open_docs) for s in self.shards)


@dataclass
class StoreStats:
    column_scans: Counter = field(default_factory=Counter)
    tuples_scanned: Counter = field(default_factory=Counter)
    term_lookups: Counter = field(default_factory=Counter)

    def reset(self) -> None:
        self.column_scans.clear()
        self.tuples_scanned.clear()
        self.term_lookups.clear()


class Store:
    """Registry of indices; single writer per index, many snapshot readers."""

    def __init__(self):
        self._indices: dict[str, Index] = {}
        self._lock = threading.RLock()
        self.stats = StoreStats()
        self._stats_lock = threading.Lock()

    # -- mutation ---------------------------------------------------------
    def create_index(self, name: str, shard_count: int = 1, routing_field: str = "id") -> Index:
        if shard_count < 1:
            raise StorageError(f"shard_count must be >= 1, got {shard_count}")
        if not name:
            raise StorageError("index name must be nonempty")
        with self._lock:
            if name in self._indices:
                raise DuplicateIndexError(f"index {name!r} already exists")
            index = Index(name, shard_count, routing_field)
            self._indices[name] = index
            return index

    def index(self, name: str) -> Index:
        try:
            return self._indices[name]
        except KeyError:
            raise UnknownIndexError(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self._indices

    @property
    def index_names(self) -> list[str]:
        return sorted(self._indices)

    def add_documents(self, name: str, docs: Iterable[Mapping]) -> list[GlobalDocId]:
        index = self.index(name)
        ids = []
        with self._lock:
            for doc in docs:
                doc = dict(doc)
                for key in doc:
                    if not key:
                        raise StorageError("field names must be nonempty")
                if len(field_values(doc.get(index.routing_field))) > 1:
                    index.routing_multivalued = True
                shard_id = index.route(doc)
                shard = index.shards[shard_id]
                ids.append(GlobalDocId(shard_id, shard.open_segment_id, len(shard.open_docs)))
                shard.open_docs.append(doc)
        return ids

    def seal_segment(self, name: str, shard_id: int) -> int | None:
        """Seal the open segment; returns its id, or None when it was empty."""
        index = self.index(name)
        with self._lock:
            shard = index.shards[shard_id]
            if not shard.open_docs:
                return None
            segment = Segment(shard.open_segment_id, shard.open_docs)
            shard.segments = shard.segments + [segment]
            shard.open_docs = []
            shard.open_segment_id = shard.next_segment_id
            shard.next_segment_id += 1
            index.epoch += 1
            return segment.segment_id

    def seal_all(self, name: str) -> list[int]:
        sealed = []
        for shard_id in range(self.index(name).shard_count):
            seg = self.seal_segment(name, shard_id)
            if seg is not None:
                sealed.append(seg)
        return sealed

    def merge_segments(self, name: str, shard_id: int, segment_ids: Sequence[int]) -> int:
        index = self.index(name)
        with self._lock:
            shard = index.shards[shard_id]
            by_id = {s.segment_id: s for s in shard.segments}
            missing = [s for s in segment_ids if s not in by_id]
            if missing or not segment_ids:
                raise SegmentStateError(f"segments {missing or segment_ids} are not sealed in shard {shard_id}")
            chosen = sorted(set(segment_ids))
            docs = [d for sid in chosen for d in by_id[sid].docs]
            new_id = shard.next_segment_id
            shard.next_segment_id += 1
            merged = Segment(new_id, docs)
            shard.segments = [s for s in shard.segments if s.segment_id not in chosen] + [merged]
            index.epoch += 1
            return new_id

    def epochs(self, names: Iterable[str] | None = None) -> dict[str, int]:
        names = self._indices if names is None else names
        return {n: self.index(n).epoch for n in names}

    def load(self, name: str, docs: Iterable[Mapping], shard_count: int = 1,
             routing_field: str = "id") -> list[GlobalDocId]:
        """Create (if needed), append and seal in one call."""
        if name not in self._indices:
            self.create_index(name, shard_count, routing_field)
        ids = self.add_documents(name, docs)
        self.seal_all(name)
        return ids

    # -- reading ----------------------------------------------------------
    def open_snapshot(self, names: Iterable[str] | None = None) -> "Snapshot":
        with self._lock:
            names = list(self._indices) if names is None else list(names)
            views = {}
            for n in names:
                index = self.index(n)
                views[n] = IndexView(
                    name=n,
                    shard_count=index.shard_count,
                    routing_field=index.routing_field,
                    routing_multivalued=index.routing_multivalued,
                    epoch=index.epoch,
                    shards=tuple(tuple(s.segments) for s in index.shards),
                )
            return Snapshot(self, views)

    def _count(self, counter: Counter, key: str, n: int = 1) -> None:
        with self._stats_lock:
            counter[key] += n


@dataclass(frozen=True)
class IndexView:
    name: str
    shard_count: int
    routing_field: str
    routing_multivalued: bool
    epoch: int
    shards: tuple[tuple[Segment, ...], ...]

    def segments(self) -> Iterator[tuple[int, Segment]]:
        for shard_id, segs in enumerate(self.shards):
            for seg in sorted(segs, key=lambda s: s.segment_id):
                yield shard_id, seg

    def route_value(self, value) -> int:
        return stable_hash(value) % self.shard_count


class Snapshot:
    """Frozen read view over a set of indices."""

    def __init__(self, store: Store, views: dict[str, IndexView]):
        self.store = store
        self.views = views
        self._segment_maps: dict[str, dict[tuple[int, int], Segment]] = {
            name: {(sh, seg.segment_id): seg for sh, seg in view.segments()}
            for name, view in views.items()
        }
        self._all_cache: dict[str, DocBitset] = {}
        self._stats_cache: dict[tuple[str, str], "FieldStats"] = {}

    def view(self, name: str) -> IndexView:
        try:
            return self.views[name]
        except KeyError:
            raise UnknownIndexError(name) from None

    @property
    def epochs(self) -> dict[str, int]:
        return {n: v.epoch for n, v in self.views.items()}

    def segment(self, name: str, doc_id: GlobalDocId) -> Segment:
        seg = self._segment_maps[name].get((doc_id.shard, doc_id.segment))
        if seg is None or doc_id.ordinal >= len(seg):
            raise StaleHandleError(f"{name}/{doc_id} is not visible in this snapshot")
        return seg

    def doc_count(self, name: str) -> int:
        return sum(len(seg) for _, seg in self.view(name).segments())

    def all_docs(self, name: str) -> DocBitset:
        cached = self._all_cache.get(name)
        if cached is None:
            ids = [encode(GlobalDocId(sh, seg.segment_id, o))
                   for sh, seg in self.view(name).segments() for o in range(len(seg))]
            cached = self._all_cache[name] = DocBitset.from_ints(ids)
        return cached

    def field_kinds(self, name: str, field_name: str) -> set[str]:
        kinds: set[str] = set()
        for _, seg in self.view(name).segments():
            kinds |= seg.field_kinds.get(field_name, set())
        return kinds

    def term_lookup(self, name: str, field_name: str, value,
                    shards: Iterable[int] | None = None) -> list[GlobalDocId]:
        value = normalize_value(value)
        key = _term_key(value)
        out = []
        self.store._count(self.store.stats.term_lookups, name)
        wanted = None if shards is None else set(shards)
        for shard_id, seg in self.view(name).segments():
            if wanted is not None and shard_id not in wanted:
                continue
            postings = seg.terms.get(field_name)
            if not postings:
                continue
            for ordinal in postings.get(key, ()):
                out.append(GlobalDocId(shard_id, seg.segment_id, ordinal))
        return out

    def range_lookup(self, name: str, field_name: str, lo=None, hi=None,
                     lo_inclusive: bool = False, hi_inclusive: bool = False) -> list[GlobalDocId]:
        kinds = self.field_kinds(name, field_name)
        if kinds and "numeric" not in kinds:
            raise FieldTypeError(f"{name}.{field_name} is not numeric")
        for bound in (lo, hi):
            if bound is not None and not is_numeric(bound):
                raise FieldTypeError(f"range bound {bound!r} is not numeric")
        out = []
        self.store._count(self.store.stats.term_lookups, name)
        for shard_id, seg in self.view(name).segments():
            entry = seg.numeric.get(field_name)
            if entry is None:
                continue
            values, ordinals = entry
            start = 0 if lo is None else (
                bisect_left(values, lo) if lo_inclusive else bisect_right(values, lo))
            stop = len(values) if hi is None else (
                bisect_right(values, hi) if hi_inclusive else bisect_left(values, hi))
            if stop <= start:
                continue
            for ordinal in np.unique(ordinals[start:stop]):
                out.append(GlobalDocId(shard_id, seg.segment_id, int(ordinal)))
        return out

    def scan_field_column(self, name: str, field_name: str,
                          doc_filter: DocBitset | None = None) -> Iterator[tuple[GlobalDocId, object]]:
        """One (id, value) pair per stored value, ascending by id."""
        self.store._count(self.store.stats.column_scans, name)
        view = self.view(name)
        scanned = 0
        try:
            if doc_filter is None:
                for shard_id, seg in view.segments():
                    col = seg.columns.get(field_name)
                    if col is None:
                        continue
                    sid = seg.segment_id
                    for ordinal, values in enumerate(col):
                        for v in values:
                            scanned += 1
                            yield GlobalDocId(shard_id, sid, ordinal), v
            else:
                for doc_id in doc_filter:
                    seg = self.segment(name, doc_id)
                    col = seg.columns.get(field_name)
                    if col is None:
                        continue
                    for v in col[doc_id.ordinal]:
                        scanned += 1
                        yield doc_id, v
        finally:
            self.store._count(self.store.stats.tuples_scanned, name, scanned)

    def values(self, name: str, doc_id: GlobalDocId, field_name: str) -> tuple:
        col = self.segment(name, doc_id).columns.get(field_name)
        return col[doc_id.ordinal] if col is not None else ()

    def materialize_docs(self, name: str, ids: Iterable[GlobalDocId],
                         fields: Sequence[str] | None = None) -> list[dict]:
        out = []
        for doc_id in sorted(ids):
            doc = self.segment(name, doc_id).docs[doc_id.ordinal]
            if fields is None:
                out.append(dict(doc))
            else:
                out.append({f: doc[f] for f in fields if f in doc})
        return out

    def evaluate_filter(self, name: str, flt: Filter | None) -> DocBitset:
        if flt is None or flt.is_match_all:
            return self.all_docs(name)
        result = None
        for clause in flt.clauses:
            if isinstance(clause, Term):
                if not isinstance(clause.value, (str, int, float)):
                    raise FilterError(f"unbound parameter in {clause.render()}")
                ids = self.term_lookup(name, clause.field, clause.value)
            elif isinstance(clause, Range):
                for b in (clause.lo, clause.hi):
                    if b is not None and not isinstance(b, (int, float)):
                        raise FilterError(f"unbound parameter in {clause.render()}")
                ids = self.range_lookup(name, clause.field, clause.lo, clause.hi,
                                        clause.lo_inclusive, clause.hi_inclusive)
            else:  # pragma: no cover
                raise FilterError(f"unknown clause {clause!r}")
            bits = DocBitset.from_ids(ids)
            result = bits if result is None else result & bits
            if not result:
                return EMPTY
        return result

    def field_stats(self, name: str, field_name: str) -> "FieldStats":
        key = (name, field_name)
        cached = self._stats_cache.get(key)
        if cached is not None:
            return cached
        distinct = set()
        lo = hi = None
        docs_with = 0
        for _, seg in self.view(name).segments():
            postings = seg.terms.get(field_name)
            if postings:
                distinct.update(postings)
            col = seg.columns.get(field_name)
            if col is not None:
                docs_with += sum(1 for v in col if v)
            entry = seg.numeric.get(field_name)
            if entry is not None and len(entry[0]):
                lo = entry[0][0] if lo is None else min(lo, entry[0][0])
                hi = entry[0][-1] if hi is None else max(hi, entry[0][-1])
        stats = FieldStats(len(distinct), docs_with,
                           None if lo is None else float(lo), None if hi is None else float(hi))
        self._stats_cache[key] = stats
        return stats


@dataclass(frozen=True)
class FieldStats:
    distinct_values: int
    docs_with_field: int
    min_value: float | None
    max_value: float | None


# Function-style aliases matching the operation names used across the engine.

def create_index(store: Store, name: str, shard_count: int, routing_field: str) -> Index:
    return store.create_index(name, shard_count, routing_field)


def add_documents(store: Store, name: str, docs: Iterable[Mapping]) -> list[GlobalDocId]:
    return store.add_documents(name, docs)


def seal_segment(store: Store, name: str, shard_id: int) -> int | None:
    return store.seal_segment(name, shard_id)


def merge_segments(store: Store, name: str, shard_id: int, segment_ids: Sequence[int]) -> int:
    return store.merge_segments(name, shard_id, segment_ids)


def open_snapshot(store: Store, names: Iterable[str] | None = None) -> Snapshot:
    return store.open_snapshot(names)
