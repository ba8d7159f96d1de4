"""Distributed semi- and inner-joins over the simulated cluster.

Every strategy follows the same shape: scan the child key column on the
nodes hosting the child shards, move the tuples with an exchange
operator, join locally on the receiving nodes, then group and sort the
fragments by parent document id.  The hash table is always built from
the child side.

An edge exists between parent ``v`` and child ``w`` iff their key value
sets intersect; a matching pair contributes one inner tuple no matter
how many values they share.
"""

from __future__ import annotations

import enum
import time
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .bitset import EMPTY, DocBitset
from .docid import GlobalDocId
from .exchange import (
    DEFAULT_CAPACITY,
    Batch,
    ClusterTopology,
    broadcast_all,
    build_batches,
    flatten,
    partition_exchange,
    route_exchange,
    sort_batches_by_docid,
    worker_partitions,
)
from .filters import Filter
from .storage import Snapshot


class JoinPlanningError(Exception):
    """Raised before any data moves: bad key types or unmet strategy preconditions."""


class Strategy(str, enum.Enum):
    BROADCAST_HASH = "BroadcastHash"
    BROADCAST_INDEX = "BroadcastIndex"
    PARTITIONED_HASH = "PartitionedHash"
    ROUTING = "Routing"

    def __str__(self) -> str:
        return self.value


StrategyChoice = Strategy


@dataclass(frozen=True)
class JoinSide:
    """One input of a join: an index, its key field, and a restriction.

    ``docs`` is a precomputed document set (e.g. a sub-plan result); when
    both ``docs`` and ``filter`` are given they are intersected.
    """

    index: str
    key: str
    filter: Filter | None = None
    docs: DocBitset | None = None


@dataclass(frozen=True)
class JoinSpec:
    parent: JoinSide
    child: JoinSide
    kind: str = "semi"
    child_fields: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("semi", "inner"):
            raise JoinPlanningError(f"unknown join kind {self.kind!r}")
        if not self.parent.key or not self.child.key:
            raise JoinPlanningError("join key fields must be named")


@dataclass
class JoinStats:
    strategy: str = ""
    build_tuples: int = 0
    probe_tuples: int = 0
    bytes_exchanged: int = 0
    wall_time_s: float = 0.0
    node_build_tuples: Counter = field(default_factory=Counter)

    def as_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "build_tuples": self.build_tuples,
            "probe_tuples": self.probe_tuples,
            "bytes_exchanged": self.bytes_exchanged,
            "wall_time_s": round(self.wall_time_s, 6),
        }


@dataclass
class JoinResult:
    kind: str
    bitset: DocBitset = EMPTY
    tuples: list[tuple[GlobalDocId, GlobalDocId, tuple]] = field(default_factory=list)
    stats: JoinStats = field(default_factory=JoinStats)

    def __len__(self) -> int:
        return len(self.bitset) if self.kind == "semi" else len(self.tuples)

    def parent_ids(self) -> DocBitset:
        if self.kind == "semi":
            return self.bitset
        return DocBitset.from_ids(t[0] for t in self.tuples)

    def same_as(self, other: "JoinResult") -> bool:
        if self.kind != other.kind:
            return False
        if self.kind == "semi":
            return self.bitset == other.bitset
        return self.tuples == other.tuples


# -- shared plumbing ----------------------------------------------------------

def check_key_types(snapshot: Snapshot, spec: JoinSpec) -> None:
    parent_kinds = snapshot.field_kinds(spec.parent.index, spec.parent.key)
    child_kinds = snapshot.field_kinds(spec.child.index, spec.child.key)
    if parent_kinds and child_kinds and not (parent_kinds & child_kinds):
        raise JoinPlanningError(
            f"key type mismatch: {spec.parent.index}.{spec.parent.key} is {sorted(parent_kinds)}, "
            f"{spec.child.index}.{spec.child.key} is {sorted(child_kinds)}")


def check_routing(snapshot: Snapshot, spec: JoinSpec) -> None:
    view = snapshot.view(spec.parent.index)
    if spec.parent.key != view.routing_field:
        raise JoinPlanningError(
            f"routing join needs the parent key to be the routing field "
            f"({spec.parent.key!r} != {view.routing_field!r})")
    if view.routing_multivalued:
        raise JoinPlanningError(f"{view.name}.{view.routing_field} holds multi-valued routing keys")


def routing_applicable(snapshot: Snapshot, spec: JoinSpec) -> bool:
    try:
        check_routing(snapshot, spec)
    except JoinPlanningError:
        return False
    return True


def resolve_docs(snapshot: Snapshot, side: JoinSide) -> DocBitset:
    if side.docs is not None:
        if side.filter is None or side.filter.is_match_all:
            return side.docs
        return side.docs & snapshot.evaluate_filter(side.index, side.filter)
    return snapshot.evaluate_filter(side.index, side.filter)


def _split_by_shard(bits: DocBitset) -> dict[int, DocBitset]:
    groups: dict[int, list[int]] = defaultdict(list)
    for enc in bits.ints():
        groups[enc >> 48].append(enc)
    return {shard: DocBitset.from_ints(v) for shard, v in sorted(groups.items())}


def _scan_sources(snapshot: Snapshot, index: str, key: str, docs: DocBitset,
                  topology: ClusterTopology, capacity: int) -> list[tuple[int, list[Batch]]]:
    """Key-column tuples grouped per origin node, one stream per shard."""
    sources = []
    for shard, shard_docs in _split_by_shard(docs).items():
        node = topology.node_of(index, shard)
        tuples = snapshot.scan_field_column(index, key, shard_docs)
        sources.append((node, list(build_batches(tuples, capacity))))
    return sources


def _run_parallel(tasks: Sequence[Callable[[], list]], workers: int) -> list[list]:
    if workers <= 1 or len(tasks) <= 1:
        return [t() for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda t: t(), tasks))


def _probe_tasks(parent_rows: list[tuple], table, kind: str, workers: int,
                 morsel: int) -> list[Callable[[], list]]:
    tasks = []
    for start in range(0, len(parent_rows), morsel):
        chunk = parent_rows[start:start + morsel]
        if kind == "semi":
            tasks.append(lambda chunk=chunk: [pid for pid, k in chunk if k in table])
        else:
            tasks.append(lambda chunk=chunk: [(pid, cid) for pid, k in chunk for cid in table.get(k, ())])
    return tasks


def _build_table(rows: Iterable[tuple], kind: str):
    if kind == "semi":
        return {k for _, k in rows}
    table: dict[object, list[GlobalDocId]] = defaultdict(list)
    for cid, k in rows:
        table[k].append(cid)
    return table


def _table_size(table) -> int:
    if isinstance(table, set):
        return len(table)
    return sum(len(v) for v in table.values())


def group_sort_output(kind: str, fragments: Iterable[Iterable], snapshot: Snapshot | None = None,
                      spec: JoinSpec | None = None, capacity: int = DEFAULT_CAPACITY) -> JoinResult:
    """Merge per-node fragments into one result ordered by parent id.

    Semi fragments are parent ids; inner fragments are (parent, child) pairs
    and come out deduplicated, parents contiguous, children ascending.
    """
    if kind == "semi":
        return JoinResult("semi", bitset=DocBitset.from_ids(pid for frag in fragments for pid in frag))
    pairs = [pair for frag in fragments for pair in frag]
    batches = list(build_batches(pairs, capacity, names=("docid", "child")))
    ordered = flatten(sort_batches_by_docid(batches))
    # stable sort above groups parents; children need ordering within a group
    out = []
    i = 0
    while i < len(ordered):
        j = i
        while j < len(ordered) and ordered[j][0] == ordered[i][0]:
            j += 1
        for child in sorted({c for _, c in ordered[i:j]}):
            out.append((ordered[i][0], child))
        i = j
    tuples = []
    fields = spec.child_fields if spec is not None else ()
    for pid, cid in out:
        values = tuple(project(snapshot.values(spec.child.index, cid, f)) for f in fields) if fields else ()
        tuples.append((pid, cid, values))
    return JoinResult("inner", tuples=tuples)


def project(values: tuple):
    if not values:
        return None
    if len(values) == 1:
        return values[0]
    return tuple(values)


@dataclass
class _Prepared:
    parent_docs: DocBitset
    child_docs: DocBitset


def _prepare(snapshot: Snapshot, spec: JoinSpec) -> _Prepared | None:
    check_key_types(snapshot, spec)
    child_docs = resolve_docs(snapshot, spec.child)
    if not child_docs:
        return None
    parent_docs = resolve_docs(snapshot, spec.parent)
    if not parent_docs:
        return None
    return _Prepared(parent_docs, child_docs)


def _finish(kind, fragments, snapshot, spec, stats, topology, bytes_before, started, capacity):
    result = group_sort_output(kind, fragments, snapshot, spec, capacity)
    stats.bytes_exchanged = topology.total_bytes - bytes_before
    stats.wall_time_s = time.perf_counter() - started
    result.stats = stats
    return result


def _empty(spec: JoinSpec, strategy: Strategy, started: float) -> JoinResult:
    return JoinResult(spec.kind, stats=JoinStats(strategy=str(strategy),
                                                wall_time_s=time.perf_counter() - started))


# -- strategies -----------------------------------------------------------------

def broadcast_hash_join(snapshot: Snapshot, spec: JoinSpec, topology: ClusterTopology, *,
                        workers: int = 1, capacity: int = DEFAULT_CAPACITY,
                        morsel: int = 4096) -> JoinResult:
    started = time.perf_counter()
    before = topology.total_bytes
    prep = _prepare(snapshot, spec)
    if prep is None:
        return _empty(spec, Strategy.BROADCAST_HASH, started)
    stats = JoinStats(strategy=str(Strategy.BROADCAST_HASH))
    sources = _scan_sources(snapshot, spec.child.index, spec.child.key, prep.child_docs, topology, capacity)
    parent_view = snapshot.view(spec.parent.index)
    receivers = topology.nodes_hosting(parent_view)
    delivered = broadcast_all(sources, receivers, topology)
    parent_by_shard = _split_by_shard(prep.parent_docs)
    fragments = []
    for node in receivers:
        rows = flatten(delivered[node])
        stats.node_build_tuples[node] += len(rows)
        table = _build_table(rows, spec.kind)
        stats.build_tuples += _table_size(table)
        probe = []
        for shard, docs in parent_by_shard.items():
            if topology.node_of(spec.parent.index, shard) == node:
                probe.extend(snapshot.scan_field_column(spec.parent.index, spec.parent.key, docs))
        stats.probe_tuples += len(probe)
        fragments.extend(_run_parallel(_probe_tasks(probe, table, spec.kind, workers, morsel), workers))
    return _finish(spec.kind, fragments, snapshot, spec, stats, topology, before, started, capacity)


def broadcast_index_join(snapshot: Snapshot, spec: JoinSpec, topology: ClusterTopology, *,
                         workers: int = 1, capacity: int = DEFAULT_CAPACITY) -> JoinResult:
    """Probe the parent's inverted index with the received keys; no parent column scan."""
    started = time.perf_counter()
    before = topology.total_bytes
    prep = _prepare(snapshot, spec)
    if prep is None:
        return _empty(spec, Strategy.BROADCAST_INDEX, started)
    stats = JoinStats(strategy=str(Strategy.BROADCAST_INDEX))
    sources = _scan_sources(snapshot, spec.child.index, spec.child.key, prep.child_docs, topology, capacity)
    parent_view = snapshot.view(spec.parent.index)
    receivers = topology.nodes_hosting(parent_view)
    delivered = broadcast_all(sources, receivers, topology)
    parent_set = set(prep.parent_docs)
    fragments = []
    for node in receivers:
        rows = flatten(delivered[node])
        stats.node_build_tuples[node] += len(rows)
        table = _build_table(rows, spec.kind)
        stats.build_tuples += _table_size(table)
        shards = [s for s in range(parent_view.shard_count)
                  if topology.node_of(spec.parent.index, s) == node]

        def lookup(keys, shards=shards, table=table):
            out = []
            for k in keys:
                hits = [pid for pid in snapshot.term_lookup(spec.parent.index, spec.parent.key, k, shards=shards)
                        if pid in parent_set]
                if spec.kind == "semi":
                    out.extend(hits)
                else:
                    out.extend((pid, cid) for pid in hits for cid in table[k])
            return out

        keys = sorted(table, key=repr)
        chunks = [keys[i:i + 256] for i in range(0, len(keys), 256)]
        stats.probe_tuples += len(keys)
        fragments.extend(_run_parallel([lambda c=c: lookup(c) for c in chunks], workers))
    return _finish(spec.kind, fragments, snapshot, spec, stats, topology, before, started, capacity)


def partitioned_hash_join(snapshot: Snapshot, spec: JoinSpec, topology: ClusterTopology, *,
                          workers: int = 1, capacity: int = DEFAULT_CAPACITY) -> JoinResult:
    """Both sides hash-partitioned over all nodes, then per worker on each node."""
    started = time.perf_counter()
    before = topology.total_bytes
    prep = _prepare(snapshot, spec)
    if prep is None:
        return _empty(spec, Strategy.PARTITIONED_HASH, started)
    stats = JoinStats(strategy=str(Strategy.PARTITIONED_HASH))
    child_src = _scan_sources(snapshot, spec.child.index, spec.child.key, prep.child_docs, topology, capacity)
    parent_src = _scan_sources(snapshot, spec.parent.index, spec.parent.key, prep.parent_docs, topology, capacity)
    child_parts = partition_exchange(child_src, "key", topology)
    parent_parts = partition_exchange(parent_src, "key", topology)
    fragments = []
    for node in topology.node_ids:
        c_batches = child_parts.get(node, [])
        p_batches = parent_parts.get(node, [])
        stats.node_build_tuples[node] += sum(len(b) for b in c_batches)
        if not c_batches or not p_batches:
            continue
        c_units = worker_partitions(c_batches, workers)
        p_units = worker_partitions(p_batches, workers)
        tasks = []
        for c_unit, p_unit in zip(c_units, p_units):
            table = _build_table(flatten(c_unit), spec.kind)
            stats.build_tuples += _table_size(table)
            probe = flatten(p_unit)
            stats.probe_tuples += len(probe)
            tasks.extend(_probe_tasks(probe, table, spec.kind, 1, max(1, len(probe))))
        fragments.extend(_run_parallel(tasks, workers))
    return _finish(spec.kind, fragments, snapshot, spec, stats, topology, before, started, capacity)


def routing_join(snapshot: Snapshot, spec: JoinSpec, topology: ClusterTopology, *,
                 workers: int = 1, capacity: int = DEFAULT_CAPACITY, local: str = "hash") -> JoinResult:
    """Route child tuples with the parent's sharding function; join shard-locally."""
    check_routing(snapshot, spec)
    started = time.perf_counter()
    before = topology.total_bytes
    prep = _prepare(snapshot, spec)
    if prep is None:
        return _empty(spec, Strategy.ROUTING, started)
    stats = JoinStats(strategy=str(Strategy.ROUTING))
    sources = _scan_sources(snapshot, spec.child.index, spec.child.key, prep.child_docs, topology, capacity)
    parent_view = snapshot.view(spec.parent.index)
    routed = route_exchange(sources, "key", parent_view, topology)
    parent_by_shard = _split_by_shard(prep.parent_docs)
    tasks = []
    for shard, batches in routed.items():
        rows = flatten(batches)
        stats.node_build_tuples[topology.node_of(spec.parent.index, shard)] += len(rows)
        table = _build_table(rows, spec.kind)
        stats.build_tuples += _table_size(table)
        docs = parent_by_shard.get(shard)
        if docs is None:
            continue
        if local == "index":
            def lookup(shard=shard, table=table, docs=set(docs)):
                out = []
                for k in sorted(table, key=repr):
                    hits = [p for p in snapshot.term_lookup(spec.parent.index, spec.parent.key, k, shards=[shard])
                            if p in docs]
                    out.extend(hits if spec.kind == "semi" else [(p, c) for p in hits for c in table[k]])
                return out
            stats.probe_tuples += len(table)
            tasks.append(lookup)
        else:
            probe = list(snapshot.scan_field_column(spec.parent.index, spec.parent.key, docs))
            stats.probe_tuples += len(probe)
            tasks.extend(_probe_tasks(probe, table, spec.kind, 1, max(1, len(probe))))
    fragments = _run_parallel(tasks, workers)
    return _finish(spec.kind, fragments, snapshot, spec, stats, topology, before, started, capacity)


STRATEGIES: dict[Strategy, Callable[..., JoinResult]] = {
    Strategy.BROADCAST_HASH: broadcast_hash_join,
    Strategy.BROADCAST_INDEX: broadcast_index_join,
    Strategy.PARTITIONED_HASH: partitioned_hash_join,
    Strategy.ROUTING: routing_join,
}


def execute_join(strategy: Strategy | str, snapshot: Snapshot, spec: JoinSpec,
                 topology: ClusterTopology, **kwargs) -> JoinResult:
    return STRATEGIES[Strategy(strategy)](snapshot, spec, topology, **kwargs)


def applicable_strategies(snapshot: Snapshot, spec: JoinSpec) -> list[Strategy]:
    out = [Strategy.BROADCAST_HASH, Strategy.BROADCAST_INDEX, Strategy.PARTITIONED_HASH]
    if routing_applicable(snapshot, spec):
        out.append(Strategy.ROUTING)
    return out
