"""Path queries via semi-join decomposition.

A path of length ``l`` visits positions ``P_1..P_{l+1}``, each a filtered
index, and hop ``k`` links ``P_k.out_k`` to ``P_{k+1}.in_k``.  Instead of
materializing partial paths with an inner-join chain, the engine computes
for every position the set of documents lying on at least one complete
path (the *layer set*) with ``l + 1`` semi-join queries:

* forward arm  ``F_1 = P_1``,  ``F_k = P_k ⋉ F_{k-1}``
* backward arm ``B_{l+1} = P_{l+1}``, ``B_k = P_k ⋉ B_{k+1}``
* ``q_1 = B_1``, ``q_{l+1} = F_{l+1}``, interior ``q_k = F_k ∧ B_k``

``q_{l+1}`` doubles as the reachability test.  Every arm is its own
cached semi-join stage, so after the test each further ``q_k`` costs one
new semi-join.  Paths are then enumerated by a depth-first search that
only steps into layer-set members, hence never dead-ends.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from heapq import merge
from typing import Iterator, Sequence

from .bitset import DocBitset
from .cache import SemanticCache
from .docid import GlobalDocId
from .exchange import ClusterTopology
from .filters import MATCH_ALL, Filter
from .join import JoinSide, JoinSpec, partitioned_hash_join
from .planner import Executor, LogicalPlan, PlannerConfig, ScanNode, semi
from .storage import Snapshot


class PathQueryError(ValueError):
    pass


class BudgetExhausted(RuntimeError):
    """The inner-join chain needed more live tuple cells than its budget."""

    def __init__(self, budget: int, needed: int, length: int):
        super().__init__(f"inner-join chain for length {length} needs >{needed} cells (budget {budget})")
        self.budget = budget
        self.needed = needed
        self.length = length


# -- schema ------------------------------------------------------------------------

@dataclass(frozen=True)
class Hop:
    """Step from the current document to a document of ``index``."""

    out_field: str
    index: str
    in_field: str
    filter: Filter = MATCH_ALL


@dataclass(frozen=True)
class Segment:
    """Hops entered from a document of ``entry_index``; ``entry_filter`` applies to that document."""

    entry_index: str
    hops: tuple[Hop, ...]
    entry_filter: Filter = MATCH_ALL

    @property
    def exit_index(self) -> str:
        return self.hops[-1].index if self.hops else self.entry_index


@dataclass(frozen=True)
class Position:
    index: str
    filter: Filter = MATCH_ALL


@dataclass(frozen=True)
class PathSchema:
    """Start index, optional fixed prefix/suffix and a repeatable hop group."""

    start: str
    group: Segment | None = None
    prefix: Segment | None = None
    suffix: Segment | None = None
    start_filter: Filter = MATCH_ALL

    @classmethod
    def uniform(cls, index: str, out_field: str, in_field: str, node_filter: Filter = MATCH_ALL) -> "PathSchema":
        """Single self-linked index: every hop goes ``out_field -> in_field``."""
        return cls(index, Segment(index, (Hop(out_field, index, in_field, node_filter),)),
                   start_filter=node_filter)

    @property
    def group_size(self) -> int:
        return len(self.group.hops) if self.group else 0

    @property
    def fixed_hops(self) -> int:
        return sum(len(s.hops) for s in (self.prefix, self.suffix) if s is not None)

    def length_for(self, repeats: int) -> int:
        return self.fixed_hops + repeats * self.group_size

    def repeats_for(self, length: int) -> int:
        g = self.group_size
        rest = length - self.fixed_hops
        if g == 0:
            if rest != 0:
                raise PathQueryError(f"schema has fixed length {self.fixed_hops}, not {length}")
            return 0
        if rest < 0 or rest % g:
            raise PathQueryError(f"length {length} is not instantiable by this schema")
        return rest // g

    def instantiate(self, length: int) -> tuple[list[Position], list[tuple[str, str]]]:
        """Positions ``P_1..P_{l+1}`` and per-hop ``(out_field, in_field)`` pairs."""
        reps = self.repeats_for(length)
        positions = [Position(self.start, self.start_filter)]
        hops: list[tuple[str, str]] = []
        segments = ([self.prefix] if self.prefix else []) + [self.group] * reps + (
            [self.suffix] if self.suffix else [])
        for seg in segments:
            last = positions[-1]
            if seg.entry_index != last.index:
                raise PathQueryError(f"segment enters {seg.entry_index!r} from {last.index!r}")
            positions[-1] = Position(last.index, last.filter & seg.entry_filter)
            for h in seg.hops:
                hops.append((h.out_field, h.in_field))
                positions.append(Position(h.index, h.filter))
        if len(positions) < 2:
            raise PathQueryError("a path needs at least two positions")
        return positions, hops


ALL_SHORTEST = "ALL_SHORTEST"
ALL_UP_TO_L = "ALL_UP_TO_L"


@dataclass(frozen=True)
class PathQuerySpec:
    schema: PathSchema
    source_filter: Filter = MATCH_ALL
    target_filter: Filter = MATCH_ALL
    min_repeat: int = 1
    max_repeat: int = 1
    semantics: str = ALL_SHORTEST

    def __post_init__(self):
        if self.max_repeat < self.min_repeat or self.min_repeat < 0:
            raise PathQueryError("repeat bounds must satisfy 0 <= min <= max")
        if self.semantics not in (ALL_SHORTEST, ALL_UP_TO_L):
            raise PathQueryError(f"unknown semantics {self.semantics!r}")
        if self.schema.group is None and (self.min_repeat, self.max_repeat) not in ((0, 0), (1, 1)):
            raise PathQueryError("repeat bounds need a hop group")
        if self.max_length < 1:
            raise PathQueryError("maximum path length must be >= 1")

    @property
    def max_length(self) -> int:
        return self.schema.length_for(self.max_repeat)

    def lengths(self) -> list[int]:
        """Candidate lengths, ascending; length 0 never qualifies."""
        if self.schema.group is None:
            return [self.schema.fixed_hops] if self.schema.fixed_hops >= 1 else []
        out = [self.schema.length_for(r) for r in range(self.min_repeat, self.max_repeat + 1)]
        return [l for l in out if l >= 1]

    def positions(self, length: int) -> tuple[list[Position], list[tuple[str, str]]]:
        if length not in self.lengths():
            raise PathQueryError(f"length {length} outside this query's range {self.lengths()}")
        positions, hops = self.schema.instantiate(length)
        positions[0] = Position(positions[0].index, positions[0].filter & self.source_filter)
        positions[-1] = Position(positions[-1].index, positions[-1].filter & self.target_filter)
        return positions, hops


# -- decomposition -------------------------------------------------------------------

def _scan(p: Position, joins=(), combine="and") -> ScanNode:
    return ScanNode(p.index, p.filter, joins=tuple(joins), combine=combine)


def forward_arm(positions: Sequence[Position], hops: Sequence[tuple[str, str]], k: int) -> ScanNode:
    """``F_k`` with 1-based ``k``."""
    node = _scan(positions[0])
    for i in range(1, k):
        out_f, in_f = hops[i - 1]
        node = _scan(positions[i], [semi(in_f, out_f, node)])
    return node


def backward_arm(positions: Sequence[Position], hops: Sequence[tuple[str, str]], k: int) -> ScanNode:
    """``B_k`` with 1-based ``k``."""
    n = len(positions)
    node = _scan(positions[-1])
    for i in range(n - 2, k - 2, -1):
        out_f, in_f = hops[i]
        node = _scan(positions[i], [semi(out_f, in_f, node)])
    return node


def decompose(spec: PathQuerySpec | PathSchema, length: int) -> list[ScanNode]:
    """The ``l + 1`` semi-join queries ``q_1..q_{l+1}`` for one path length."""
    if isinstance(spec, PathSchema):
        positions, hops = spec.instantiate(length)
    else:
        if length > spec.max_length:
            raise PathQueryError(f"length {length} exceeds maximum {spec.max_length}")
        positions, hops = spec.positions(length)
    n = len(positions)
    out = []
    for k in range(1, n + 1):
        if k == 1:
            out.append(backward_arm(positions, hops, 1))
        elif k == n:
            out.append(forward_arm(positions, hops, n))
        else:
            f = forward_arm(positions, hops, k).joins[0]
            b = backward_arm(positions, hops, k).joins[0]
            out.append(_scan(positions[k - 1], [f, b]))
    return out


def count_semi_joins(node: ScanNode) -> int:
    return sum(1 + count_semi_joins(j.child) for j in node.joins)


# -- results ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Path:
    steps: tuple[tuple[str, GlobalDocId], ...]

    @property
    def ids(self) -> tuple[GlobalDocId, ...]:
        return tuple(d for _, d in self.steps)

    @property
    def length(self) -> int:
        return len(self.steps) - 1

    def to_record(self, snapshot: Snapshot | None = None, fields: Sequence[str] | None = None) -> list[dict]:
        out = []
        for index, doc in self.steps:
            rec = {"index": index, "id": str(doc)}
            if snapshot is not None and fields is not None:
                rec["fields"] = snapshot.materialize_docs(index, [doc], fields)[0]
            out.append(rec)
        return out


@dataclass
class LayerSets:
    length: int
    positions: list[Position]
    hops: list[tuple[str, str]]
    layers: list[DocBitset]

    def __getitem__(self, k: int) -> DocBitset:
        """1-based access to ``R_{q_k}``."""
        return self.layers[k - 1]

    @property
    def total(self) -> int:
        return sum(len(r) for r in self.layers)


@dataclass
class SjdCounters:
    semi_joins_executed: int = 0
    cache_hits: int = 0
    lengths_tested: int = 0
    paths_emitted: int = 0
    table_lookups: int = 0
    peak_live_tuples: int = 0
    per_length: dict[int, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["per_length"] = {str(k): v for k, v in self.per_length.items()}
        return d


@dataclass
class ShortestPaths:
    length: int | None
    paths: Iterator[Path]
    counters: SjdCounters


# -- engine ------------------------------------------------------------------------------

class PathEngine:
    """Runs decompositions through the stage executor with a shared semantic cache."""

    def __init__(self, snapshot: Snapshot, topology: ClusterTopology | None = None,
                 cache: SemanticCache | None = None, config: PlannerConfig | None = None,
                 pivot: str = "last", planner: str = "adaptive"):
        if pivot not in ("last", "middle"):
            raise PathQueryError("pivot must be 'last' or 'middle'")
        if planner not in ("adaptive", "static"):
            raise PathQueryError("planner must be 'adaptive' or 'static'")
        self.planner = planner
        self.snapshot = snapshot
        self.topology = topology or ClusterTopology()
        self.cache = cache if cache is not None else SemanticCache.for_store(snapshot.store)
        self.config = config or PlannerConfig(workers=1)
        self.pivot = pivot
        self.counters = SjdCounters()
        self._executor = Executor(snapshot, self.topology, self.cache, self.config)

    def _run(self, query: ScanNode, length: int) -> DocBitset:
        plan = LogicalPlan(query, "sjd")
        ex = (self._executor.execute_adaptive(plan) if self.planner == "adaptive"
              else self._executor.execute_static(plan))
        c = self.counters
        c.semi_joins_executed += ex.stats.semi_joins_executed
        c.cache_hits += ex.stats.cache_hits
        c.per_length[length] = c.per_length.get(length, 0) + ex.stats.semi_joins_executed
        for out in ex.outcomes.values():
            js = out.join_stats
            if js:
                c.peak_live_tuples = max(c.peak_live_tuples, js["build_tuples"] + js["probe_tuples"])
        return ex.result.docs

    def _pivot_index(self, length: int) -> int:
        return length + 1 if self.pivot == "last" else (length + 2) // 2

    def reachability_test(self, spec: PathQuerySpec, length: int) -> bool:
        queries = decompose(spec, length)
        k = self._pivot_index(length)
        return bool(self._run(queries[k - 1], length))

    def compute_layer_sets(self, spec: PathQuerySpec, length: int) -> LayerSets:
        positions, hops = spec.positions(length)
        queries = decompose(spec, length)
        n = len(queries)
        pivot = self._pivot_index(length)
        layers: list[DocBitset | None] = [None] * n
        layers[pivot - 1] = self._run(queries[pivot - 1], length)
        if layers[pivot - 1]:
            # descending order reuses each backward arm computed by the previous query
            for k in range(n, 0, -1):
                if layers[k - 1] is None:
                    layers[k - 1] = self._run(queries[k - 1], length)
        else:
            layers = [layers[pivot - 1] if i == pivot - 1 else DocBitset.from_ints([]) for i in range(n)]
        return LayerSets(length, positions, hops, layers)

    def materialize_paths(self, layers: LayerSets) -> Iterator[Path]:
        """Guided DFS over layer-set members, ascending GlobalDocId at each branch."""
        positions, hops = layers.positions, layers.hops
        n = len(positions)
        if any(not r for r in layers.layers):
            return
        tables: list[dict | None] = [None]
        for k in range(1, n):
            table: dict[object, list[GlobalDocId]] = defaultdict(list)
            for doc, value in self.snapshot.scan_field_column(positions[k].index, hops[k - 1][1],
                                                               doc_filter=layers.layers[k]):
                table[value].append(doc)
            tables.append(table)

        names = [p.index for p in positions]

        def successors(k: int, doc: GlobalDocId) -> list[GlobalDocId]:
            table = tables[k + 1]
            lists = []
            for v in self.snapshot.values(names[k], doc, hops[k][0]):
                self.counters.table_lookups += 1
                hit = table.get(v)
                if hit:
                    lists.append(hit)
            out, last = [], None
            for d in merge(*lists):
                if d != last:
                    out.append(d)
                    last = d
            return out

        def walk(prefix: list[GlobalDocId]):
            k = len(prefix) - 1
            if k == n - 1:
                self.counters.paths_emitted += 1
                yield Path(tuple(zip(names, prefix)))
                return
            for nxt in successors(k, prefix[-1]):
                prefix.append(nxt)
                yield from walk(prefix)
                prefix.pop()

        for start in layers.layers[0]:
            yield from walk([start])

    def all_shortest_paths(self, spec: PathQuerySpec) -> ShortestPaths:
        for length in spec.lengths():
            self.counters.lengths_tested += 1
            if self.reachability_test(spec, length):
                layers = self.compute_layer_sets(spec, length)
                return ShortestPaths(length, self.materialize_paths(layers), self.counters)
        return ShortestPaths(None, iter(()), self.counters)

    def paths_up_to(self, spec: PathQuerySpec) -> Iterator[Path]:
        for length in spec.lengths():
            self.counters.lengths_tested += 1
            if self.reachability_test(spec, length):
                yield from self.materialize_paths(self.compute_layer_sets(spec, length))

    def run(self, spec: PathQuerySpec) -> tuple[int | None, Iterator[Path]]:
        if spec.semantics == ALL_SHORTEST:
            res = self.all_shortest_paths(spec)
            return res.length, res.paths
        return None, self.paths_up_to(spec)

    def live_tuple_bound(self, spec: PathQuerySpec, length: int) -> int:
        """``Σ_k |D_k|`` over the positions of one length, counted in join tuples.

        A document contributes one tuple per value of each hop field it is
        joined on, so single-valued edge documents count once per field.
        """
        positions, hops = spec.positions(length)
        total = 0
        for k, p in enumerate(positions):
            used = ([hops[k - 1][1]] if k > 0 else []) + ([hops[k][0]] if k < len(hops) else [])
            view = self.snapshot.view(p.index)
            for f in set(used):
                total += sum(len(values) for _, seg in view.segments()
                             for values in seg.columns.get(f, ()))
        return total


# -- module-level entry points ---------------------------------------------------------

def reachability_test(snapshot: Snapshot, spec: PathQuerySpec, length: int,
                      cache: SemanticCache | None = None, **kwargs) -> bool:
    return PathEngine(snapshot, cache=cache, **kwargs).reachability_test(spec, length)


def compute_layer_sets(snapshot: Snapshot, spec: PathQuerySpec, length: int,
                       cache: SemanticCache | None = None, **kwargs) -> LayerSets:
    return PathEngine(snapshot, cache=cache, **kwargs).compute_layer_sets(spec, length)


def materialize_paths(snapshot: Snapshot, layers: LayerSets) -> Iterator[Path]:
    return PathEngine(snapshot).materialize_paths(layers)


def all_shortest_paths(snapshot: Snapshot, spec: PathQuerySpec,
                       cache: SemanticCache | None = None, **kwargs) -> ShortestPaths:
    return PathEngine(snapshot, cache=cache, **kwargs).all_shortest_paths(spec)


def paths_up_to(snapshot: Snapshot, spec: PathQuerySpec,
                cache: SemanticCache | None = None, **kwargs) -> Iterator[Path]:
    return PathEngine(snapshot, cache=cache, **kwargs).paths_up_to(spec)


# -- baseline ------------------------------------------------------------------------------

DEFAULT_BUDGET = 1_000_000


@dataclass
class BaselineStats:
    peak_live_cells: int = 0


def inner_join_chain_baseline(snapshot: Snapshot, spec: PathQuerySpec, length: int,
                              topology: ClusterTopology | None = None,
                              budget: int = DEFAULT_BUDGET,
                              stats: BaselineStats | None = None) -> Iterator[Path]:
    """Enumerate length-``l`` paths by a left-deep chain of partitioned hash inner joins.

    Partial paths are fully materialized after every join; ``budget`` caps
    the number of live id cells (rows times width).
    """
    topology = topology or ClusterTopology()
    stats = stats if stats is not None else BaselineStats()
    positions, hops = spec.positions(length)
    names = [p.index for p in positions]
    rows: list[tuple[GlobalDocId, ...]] = [(d,) for d in
                                           snapshot.evaluate_filter(positions[0].index, positions[0].filter)]

    def charge(cells: int) -> None:
        stats.peak_live_cells = max(stats.peak_live_cells, cells)
        if cells > budget:
            raise BudgetExhausted(budget, cells, length)

    charge(len(rows))
    for k, (out_f, in_f) in enumerate(hops):
        if not rows:
            return
        frontier = DocBitset.from_ids({r[-1] for r in rows})
        nxt = snapshot.evaluate_filter(positions[k + 1].index, positions[k + 1].filter)
        pairs = partitioned_hash_join(snapshot, JoinSpec(JoinSide(names[k], out_f, docs=frontier),
                                                         JoinSide(names[k + 1], in_f, docs=nxt),
                                                         kind="inner"), topology).tuples
        by_parent: dict[GlobalDocId, list[GlobalDocId]] = defaultdict(list)
        for p, c, _ in pairs:
            by_parent[p].append(c)
        width = k + 2
        base = len(rows) * (width - 1) + 2 * len(pairs)
        extended = []
        for r in rows:
            for c in by_parent.get(r[-1], ()):
                extended.append(r + (c,))
                if len(extended) % 4096 == 0:
                    charge(base + len(extended) * width)
        charge(base + len(extended) * width)
        rows = extended
    for r in rows:
        yield Path(tuple(zip(names, r)))
