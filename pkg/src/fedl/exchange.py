"""Columnar batches and the simulated cluster's exchange operators.

Intermediate join tuples travel as fixed-capacity :class:`Batch` objects:
one tuple per row, column-major storage, always with a ``docid`` column.
Exchange operators move batches between simulated nodes and charge the
serialized size of every non-local delivery to the sending channel.
"""

from __future__ import annotations

import threading
import time
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Mapping, Sequence

from .docid import encode
from .filters import is_numeric
from .storage import IndexView, stable_hash

DEFAULT_CAPACITY = 1024
DOCID_BYTES = 8
NUMERIC_BYTES = 8

# salts keep node partitioning, worker partitioning and shard routing independent
NODE_SALT = 0x5EED
WORKER_SALT = 0xC0FFEE


def value_size(value) -> int:
    if value is None:
        return 0
    if is_numeric(value):
        return NUMERIC_BYTES
    return len(str(value).encode("utf-8"))


@dataclass(frozen=True)
class Batch:
    """Immutable columnar block of at most ``capacity`` tuples."""

    names: tuple[str, ...]
    columns: tuple[tuple, ...]
    capacity: int = DEFAULT_CAPACITY

    def __post_init__(self):
        if "docid" not in self.names:
            raise ValueError("every batch carries a docid column")
        if len(self.names) != len(self.columns):
            raise ValueError("column/name count mismatch")
        lengths = {len(c) for c in self.columns}
        if len(lengths) > 1:
            raise ValueError("columns must have equal length")
        if self.row_count > self.capacity:
            raise ValueError("batch exceeds capacity")

    @property
    def row_count(self) -> int:
        return len(self.columns[0]) if self.columns else 0

    def __len__(self) -> int:
        return self.row_count

    def column(self, name: str) -> tuple:
        return self.columns[self.names.index(name)]

    def rows(self) -> Iterator[tuple]:
        return zip(*self.columns)

    @property
    def nbytes(self) -> int:
        total = 0
        for name, col in zip(self.names, self.columns):
            if name == "docid":
                total += DOCID_BYTES * len(col)
            else:
                total += sum(value_size(v) for v in col)
        return total


def build_batches(tuples: Iterable[Sequence], capacity: int = DEFAULT_CAPACITY,
                  names: Sequence[str] = ("docid", "key")) -> Iterator[Batch]:
    """Chunk a tuple stream into full batches (the last may be partial)."""
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    names = tuple(names)
    width = len(names)
    buf: list[Sequence] = []
    for t in tuples:
        buf.append(t)
        if len(buf) == capacity:
            yield _make(buf, names, width, capacity)
            buf = []
    if buf:
        yield _make(buf, names, width, capacity)


def _make(rows, names, width, capacity) -> Batch:
    cols = tuple(zip(*rows)) if rows else tuple(() for _ in range(width))
    return Batch(names, cols, capacity)


def flatten(batches: Iterable[Batch]) -> list[tuple]:
    return [row for b in batches for row in b.rows()]


def rebatch(rows: Iterable[Sequence], like: Batch | None, names=None, capacity=None) -> list[Batch]:
    names = names or (like.names if like is not None else ("docid", "key"))
    capacity = capacity or (like.capacity if like is not None else DEFAULT_CAPACITY)
    return list(build_batches(rows, capacity, names))


def _docid_int(value) -> int:
    return encode(value) if isinstance(value, tuple) else int(value)


def radix_partition(batches: Sequence[Batch], partitions: int, key="docid",
                    salt: int = WORKER_SALT) -> list[list[Batch]]:
    """Split tuples into ``partitions`` streams, stable within each stream.

    ``key="docid"`` partitions by contiguous id ranges (so concatenating
    the outputs preserves global order); any other string names a column
    whose value is hashed.
    """
    if partitions < 1:
        raise ValueError("partitions must be >= 1")
    batches = list(batches)
    if not batches:
        return [[] for _ in range(partitions)]
    names = batches[0].names
    capacity = batches[0].capacity
    if partitions == 1:
        return [batches]
    buckets: list[list[tuple]] = [[] for _ in range(partitions)]
    if key == "docid":
        pos = names.index("docid")
        encoded = [_docid_int(row[pos]) for b in batches for row in b.rows()]
        if encoded:
            lo, hi = min(encoded), max(encoded)
            bits = (partitions - 1).bit_length()
            shift = max(0, (hi - lo).bit_length() - bits)
            rows = (row for b in batches for row in b.rows())
            for enc, row in zip(encoded, rows):
                p = (((enc - lo) >> shift) * partitions) >> bits
                buckets[p].append(row)
    else:
        pos = names.index(key)
        for b in batches:
            for row in b.rows():
                buckets[stable_hash(row[pos], salt) % partitions].append(row)
    return [list(build_batches(rows, capacity, names)) for rows in buckets]


def sort_batches_by_docid(batches: Sequence[Batch], partitions: int = 16) -> list[Batch]:
    """Global stable sort by docid: range partition, then sort each partition."""
    batches = list(batches)
    if not batches:
        return []
    names = batches[0].names
    capacity = batches[0].capacity
    pos = names.index("docid")
    out_rows: list[tuple] = []
    for part in radix_partition(batches, partitions, key="docid"):
        rows = flatten(part)
        rows.sort(key=lambda r: _docid_int(r[pos]))
        out_rows.extend(rows)
    return list(build_batches(out_rows, capacity, names))


@dataclass(frozen=True)
class Morsel:
    """Contiguous slice of a segment (ordinal range) or of a batch list."""

    source: object
    start: int
    stop: int

    def __len__(self) -> int:
        return self.stop - self.start


def morsels(total: int, source: object, size: int) -> list[Morsel]:
    if size < 1:
        raise ValueError("morsel size must be >= 1")
    return [Morsel(source, s, min(s + size, total)) for s in range(0, total, size)]


class ClusterTopology:
    """Simulated nodes, shard placement and per-channel byte counters."""

    def __init__(self, node_ids: Sequence[int] = (0,),
                 assignment: Mapping[tuple[str, int], int] | None = None,
                 latency_s: float = 0.0,
                 codec: Callable[[int], int] | None = None):
        if not node_ids:
            raise ValueError("topology needs at least one node")
        self.node_ids = tuple(node_ids)
        self.assignment: dict[tuple[str, int], int] = dict(assignment or {})
        for node in self.assignment.values():
            if node not in self.node_ids:
                raise ValueError(f"shard assigned to unknown node {node}")
        self.latency_s = latency_s
        # wire codec slot; identity means uncompressed accounting
        self.codec = codec or (lambda n: n)
        self._channels: Counter = Counter()
        self._lock = threading.Lock()

    @classmethod
    def with_nodes(cls, n: int, **kwargs) -> "ClusterTopology":
        return cls(tuple(range(n)), **kwargs)

    def node_of(self, index: str, shard: int) -> int:
        node = self.assignment.get((index, shard))
        if node is None:
            offset = stable_hash(index) % len(self.node_ids)
            node = self.node_ids[(shard + offset) % len(self.node_ids)]
        return node

    def place(self, index: str, shard: int, node: int) -> None:
        if node not in self.node_ids:
            raise ValueError(f"unknown node {node}")
        self.assignment[(index, shard)] = node

    def nodes_hosting(self, view: IndexView) -> list[int]:
        return sorted({self.node_of(view.name, s) for s in range(view.shard_count)})

    def transfer(self, sender: int, receiver: int, nbytes: int) -> int:
        if sender == receiver or nbytes == 0:
            return 0
        wire = self.codec(nbytes)
        with self._lock:
            self._channels[(sender, receiver)] += wire
        if self.latency_s:
            time.sleep(self.latency_s)
        return wire

    def network_stats(self) -> dict:
        with self._lock:
            channels = dict(self._channels)
        return {"channels": {f"{s}->{r}": b for (s, r), b in sorted(channels.items())},
                "total_bytes": sum(channels.values())}

    @property
    def total_bytes(self) -> int:
        with self._lock:
            return sum(self._channels.values())


# -- exchange operators ----------------------------------------------------

Sources = Sequence[tuple[int, Sequence[Batch]]]


def broadcast(node: int, batches: Sequence[Batch], receivers: Sequence[int],
              topology: ClusterTopology) -> dict[int, list[Batch]]:
    """Deliver the full stream to every receiver."""
    if not receivers:
        raise ValueError("broadcast needs at least one receiver")
    batches = list(batches)
    out = {}
    for r in receivers:
        for b in batches:
            topology.transfer(node, r, b.nbytes)
        out[r] = list(batches)
    return out


def broadcast_all(sources: Sources, receivers: Sequence[int],
                  topology: ClusterTopology) -> dict[int, list[Batch]]:
    merged: dict[int, list[Batch]] = {r: [] for r in receivers}
    for node, batches in sources:
        for r, got in broadcast(node, batches, receivers, topology).items():
            merged[r].extend(got)
    return merged


def _scatter(sources: Sources, destination: Callable[[tuple], int],
             topology: ClusterTopology, node_for: Callable[[int], int]) -> dict[int, list[Batch]]:
    """Send each row to ``destination(row)``; output merged by (sender order, arrival)."""
    rows_by_dest: dict[int, list[tuple]] = defaultdict(list)
    template: Batch | None = None
    for sender, batches in sources:
        per_dest: dict[int, list[tuple]] = defaultdict(list)
        for b in batches:
            template = template or b
            for row in b.rows():
                per_dest[destination(row)].append(row)
        for dest in sorted(per_dest):
            rows = per_dest[dest]
            for chunk in build_batches(rows, template.capacity, template.names):
                topology.transfer(sender, node_for(dest), chunk.nbytes)
            rows_by_dest[dest].extend(rows)
    if template is None:
        return {}
    return {d: list(build_batches(rows, template.capacity, template.names))
            for d, rows in sorted(rows_by_dest.items())}


def _key_pos(sources: Sources, key: str) -> int | None:
    for _, batches in sources:
        for b in batches:
            if key not in b.names:
                raise KeyError(f"column {key!r} missing from batch")
            return b.names.index(key)
    return None


def partition_exchange(sources: Sources, key: str, topology: ClusterTopology) -> dict[int, list[Batch]]:
    """Hash-partition tuples across all nodes of the topology."""
    pos = _key_pos(sources, key)
    if pos is None:
        return {}
    nodes = topology.node_ids
    return _scatter(sources, lambda row: nodes[stable_hash(row[pos], NODE_SALT) % len(nodes)],
                    topology, lambda node: node)


def route_exchange(sources: Sources, key: str, parent: IndexView,
                   topology: ClusterTopology) -> dict[int, list[Batch]]:
    """Send each tuple to the parent shard its key routes to; keyed by shard id."""
    pos = _key_pos(sources, key)
    if pos is None:
        return {}
    return _scatter(sources, lambda row: parent.route_value(row[pos]), topology,
                    lambda shard: topology.node_of(parent.name, shard))


def worker_partitions(batches: Sequence[Batch], workers: int, key: str = "key") -> list[list[Batch]]:
    """Receiver-side second partitioning into per-worker work units."""
    return radix_partition(batches, max(1, workers), key=key, salt=WORKER_SALT)


def network_stats(topology: ClusterTopology) -> dict:
    return topology.network_stats()
