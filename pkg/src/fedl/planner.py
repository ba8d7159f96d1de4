"""Staged logical plans, plan folding, and adaptive/static execution.

A plan is a tree of scans.  Each :class:`ScanNode` reads one index with a
filter and may carry child :class:`JoinNode` operators whose results are
combined (AND/OR) to restrict it; each join's child is again a scan.  Every
join is one stage, i.e. a point where an intermediate result is fully
materialized.  A root scan combining several joins adds a final stage.

The adaptive executor picks each stage's join strategy only once all of
its dependencies have run, using their exact cardinalities.  The static
executor fixes every strategy from estimates before anything runs and
prefetches parent scans one stage ahead.
"""

from __future__ import annotations

import itertools
import threading
import time
from collections import Counter, defaultdict
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from functools import reduce
from typing import Mapping, Sequence

from .bitset import EMPTY, DocBitset
from .cache import SemanticCache, SemanticKey
from .docid import GlobalDocId
from .exchange import DEFAULT_CAPACITY, ClusterTopology
from .filters import MATCH_ALL, Filter, Range, Term
from .join import (
    JoinResult,
    JoinSide,
    JoinSpec,
    Strategy,
    check_key_types,
    execute_join,
    project,
    routing_applicable,
)
from .storage import Snapshot


class PlanError(Exception):
    pass


# -- logical plan -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScanNode:
    index: str
    filter: Filter = MATCH_ALL
    fields: tuple[str, ...] = ()
    joins: tuple["JoinNode", ...] = ()
    combine: str = "and"
    alias: str | None = None

    def __post_init__(self):
        if self.combine not in ("and", "or"):
            raise PlanError(f"unknown combine mode {self.combine!r}")

    @property
    def label(self) -> str:
        return self.alias or self.index

    @property
    def needs_rows(self) -> bool:
        return bool(self.fields) or any(j.kind == "inner" for j in self.joins)


@dataclass(frozen=True, eq=False)
class JoinNode:
    kind: str
    parent_key: str
    child_key: str
    child: ScanNode

    def __post_init__(self):
        if self.kind not in ("semi", "inner"):
            raise PlanError(f"unknown join kind {self.kind!r}")


@dataclass
class LogicalPlan:
    root: ScanNode
    name: str = "plan"

    @property
    def roots(self) -> list[ScanNode]:
        return [self.root]


def semi(parent_key: str, child_key: str, child: ScanNode) -> JoinNode:
    return JoinNode("semi", parent_key, child_key, child)


def inner(parent_key: str, child_key: str, child: ScanNode) -> JoinNode:
    return JoinNode("inner", parent_key, child_key, child)


def validate_plan(plan: "LogicalPlan | FoldedPlan", snapshot: Snapshot) -> None:
    def walk(scan: ScanNode, depth: int):
        if depth > 10_000:
            raise PlanError("plan too deep (cycle?)")
        if scan.index not in snapshot.views:
            raise PlanError(f"unknown index {scan.index!r}")
        for j in scan.joins:
            if j.kind == "inner" and scan.combine == "or":
                raise PlanError("inner joins cannot be combined disjunctively")
            walk(j.child, depth + 1)

    for root in plan.roots:
        walk(root, 0)


# -- semantic identity ---------------------------------------------------------

def scan_canonical(scan: ScanNode, rows: bool = False) -> str:
    joins = sorted(join_canonical(scan, j) for j in scan.joins)
    head = f"{scan.index}|{scan.filter.canonical()}"
    if rows:
        head += f"|as={scan.label}|fields={','.join(sorted(scan.fields))}"
    mode = scan.combine if len(joins) > 1 else "and"
    return f"scan({head}|{mode}:[{';'.join(joins)}])"


def join_canonical(parent: ScanNode, join: JoinNode) -> str:
    child = scan_canonical(join.child, rows=join.kind == "inner")
    return (f"{join.kind}({parent.index}|{parent.filter.canonical()}|"
            f"{join.parent_key}={join.child_key}|{child})")


def referenced_indices(scan: ScanNode) -> set[str]:
    out = {scan.index}
    for j in scan.joins:
        out |= referenced_indices(j.child)
    return out


def semantic_key(parent: ScanNode, join: JoinNode, epochs: Mapping[str, int]) -> SemanticKey:
    names = {parent.index} | referenced_indices(join.child)
    return SemanticKey.build(join_canonical(parent, join), {n: epochs[n] for n in names})


# -- stages --------------------------------------------------------------------

@dataclass
class Stage:
    stage_id: int
    kind: str                       # "join" | "combine" | "scan"
    parent: ScanNode
    join: JoinNode | None
    deps: frozenset[int]
    # stage ids of the joins of the scan this stage evaluates, aligned with its ``joins``
    input_stage_ids: tuple[int, ...]
    canonical: str
    indices: frozenset[str]
    height: int
    roots: tuple[int, ...] = ()

    @property
    def scan(self) -> ScanNode:
        return self.join.child if self.join is not None else self.parent

    def describe(self) -> str:
        if self.join is None:
            n = len(self.parent.joins)
            what = "SCAN" if n == 0 else f"{self.parent.combine.upper()} of {n} joins"
            return f"{what} {self.parent.index}{_flt(self.parent.filter)}"
        j = self.join
        sym = "SEMI" if j.kind == "semi" else "INNER"
        return (f"{sym} {self.parent.index}{_flt(self.parent.filter)}.{j.parent_key} = "
                f"{j.child.index}{_flt(j.child.filter)}.{j.child_key}")


def _flt(f: Filter) -> str:
    return "" if f.is_match_all else f"[{f.render()}]"


@dataclass
class _Proto:
    order: int
    kind: str
    parent: ScanNode
    join: JoinNode | None
    inputs: list["_Proto"]
    canonical: str
    height: int
    roots: list[int] = field(default_factory=list)
    stage_id: int = 0


def build_stages(plan: "LogicalPlan | FoldedPlan") -> list[Stage]:
    """One stage per join occurrence plus a final stage for roots that combine != 1 joins.

    For folded plans, semantically identical operators collapse into one stage.
    """
    dedupe = isinstance(plan, FoldedPlan)
    protos: list[_Proto] = []
    seen: dict[str, _Proto] = {}
    counter = itertools.count()

    def make(kind, parent, join, inputs, canonical):
        if dedupe and canonical in seen:
            return seen[canonical]
        height = 1 + max((p.height for p in inputs), default=0)
        proto = _Proto(next(counter), kind, parent, join, inputs, canonical, height)
        protos.append(proto)
        if dedupe:
            seen[canonical] = proto
        return proto

    def visit(parent: ScanNode, join: JoinNode) -> _Proto:
        inputs = [visit(join.child, j) for j in join.child.joins]
        return make("join", parent, join, inputs, join_canonical(parent, join))

    finals = []
    for r, root in enumerate(plan.roots):
        inputs = [visit(root, j) for j in root.joins]
        if len(root.joins) == 1:
            final = inputs[0]
        else:
            kind = "scan" if not root.joins else "combine"
            final = make(kind, root, None, inputs, "root:" + scan_canonical(root, rows=True))
        final.roots.append(r)
        finals.append(final)

    protos.sort(key=lambda p: (p.height, p.order))
    for i, p in enumerate(protos, start=1):
        p.stage_id = i
    stages = []
    for p in protos:
        indices = referenced_indices(p.parent) if p.join is None else (
            {p.parent.index} | referenced_indices(p.join.child))
        stages.append(Stage(
            stage_id=p.stage_id, kind=p.kind, parent=p.parent, join=p.join,
            deps=frozenset(q.stage_id for q in p.inputs),
            input_stage_ids=tuple(q.stage_id for q in p.inputs),
            canonical=p.canonical, indices=frozenset(indices), height=p.height,
            roots=tuple(p.roots)))
    return stages


# -- folding -------------------------------------------------------------------

@dataclass
class FoldEntry:
    kept: int
    merged: tuple[int, ...]
    operator: str


@dataclass
class FoldedPlan:
    roots: list[ScanNode]
    report: list[FoldEntry]
    names: list[str] = field(default_factory=list)
    source_stage_count: int = 0


def fold_plan(*plans: LogicalPlan | Sequence[LogicalPlan]) -> FoldedPlan:
    """Merge operators with equal semantic definitions across one or more plans."""
    flat: list[LogicalPlan] = []
    for p in plans:
        flat.extend(p if isinstance(p, (list, tuple)) else [p])
    batch = FoldedPlan([p.root for p in flat], [], [p.name for p in flat])
    unfolded = build_stages(_Unfolded(batch.roots))
    groups: dict[str, list[Stage]] = defaultdict(list)
    for st in unfolded:
        groups[st.canonical].append(st)
    report = []
    for members in groups.values():
        if len(members) > 1:
            ids = sorted(m.stage_id for m in members)
            report.append(FoldEntry(ids[0], tuple(ids[1:]), members[0].describe()))
    report.sort(key=lambda e: e.kept)

    if not report:
        return FoldedPlan(batch.roots, [], batch.names, len(unfolded))

    scans: dict[str, ScanNode] = {}
    joins: dict[str, JoinNode] = {}

    def fold_scan(scan: ScanNode) -> ScanNode:
        new_joins = tuple(fold_join(scan, j) for j in scan.joins)
        node = ScanNode(scan.index, scan.filter, scan.fields, new_joins, scan.combine, scan.alias)
        return scans.setdefault(scan_canonical(node, rows=True), node)

    def fold_join(parent: ScanNode, join: JoinNode) -> JoinNode:
        node = JoinNode(join.kind, join.parent_key, join.child_key, fold_scan(join.child))
        return joins.setdefault(join_canonical(parent, node), node)

    return FoldedPlan([fold_scan(r) for r in batch.roots], report, batch.names, len(unfolded))


@dataclass
class _Unfolded:
    roots: list[ScanNode]


# -- statistics and cost model --------------------------------------------------

DEFAULT_RANGE_SELECTIVITY = 1 / 3


class Statistics:
    """Pre-execution estimates: doc counts times independent clause selectivities."""

    def __init__(self, snapshot: Snapshot | None = None,
                 doc_counts: Mapping[str, float] | None = None,
                 selectivities: Mapping[str, float] | None = None):
        self.snapshot = snapshot
        self.doc_counts = dict(doc_counts or {})
        # keyed by "<index>:<clause canonical>"
        self.selectivities = dict(selectivities or {})

    def doc_count(self, index: str) -> float:
        if index in self.doc_counts:
            return float(self.doc_counts[index])
        if self.snapshot is None:
            raise PlanError(f"no statistics for index {index!r}")
        return float(self.snapshot.doc_count(index))

    def ndv(self, index: str, field_name: str) -> int:
        if self.snapshot is None or index not in self.snapshot.views:
            return 0
        return self.snapshot.field_stats(index, field_name).distinct_values

    def clause_selectivity(self, index: str, clause) -> float:
        override = self.selectivities.get(f"{index}:{clause.canonical()}")
        if override is not None:
            return float(override)
        if self.snapshot is None or index not in self.snapshot.views:
            return DEFAULT_RANGE_SELECTIVITY
        fs = self.snapshot.field_stats(index, clause.field)
        if isinstance(clause, Term):
            return 0.0 if fs.distinct_values == 0 else 1.0 / fs.distinct_values
        if isinstance(clause, Range):
            if fs.min_value is None:
                return 0.0
            lo = fs.min_value if clause.lo is None else max(float(clause.lo), fs.min_value)
            hi = fs.max_value if clause.hi is None else min(float(clause.hi), fs.max_value)
            if hi < lo:
                return 0.0
            width = fs.max_value - fs.min_value
            if width <= 0:
                return 1.0
            return min(1.0, (hi - lo) / width)
        return DEFAULT_RANGE_SELECTIVITY

    def scan_base(self, scan: ScanNode) -> float:
        n = self.doc_count(scan.index)
        for c in scan.filter.clauses:
            n *= self.clause_selectivity(scan.index, c)
        return n

    def scan_docs(self, scan: ScanNode) -> float:
        """Estimated number of documents surviving the scan and its semi-joins."""
        base = self.scan_base(scan)
        fractions = []
        for j in scan.joins:
            total = self.doc_count(j.child.index)
            frac = 1.0 if total == 0 else min(1.0, self.scan_docs(j.child) / total)
            fractions.append(frac)
        if not fractions:
            return base
        if scan.combine == "or":
            return base * min(1.0, sum(fractions))
        return base * reduce(lambda a, b: a * b, fractions, 1.0)


def estimate_cardinality(operator, statistics: Statistics,
                         actuals: Mapping[int, int] | None = None) -> float:
    """Exact count for executed stages, otherwise the independence estimate."""
    if isinstance(operator, Stage):
        if actuals is not None and operator.stage_id in actuals:
            return float(actuals[operator.stage_id])
        if operator.join is None:
            return statistics.scan_docs(operator.parent)
        parent = ScanNode(operator.parent.index, operator.parent.filter, joins=(operator.join,))
        return statistics.scan_docs(parent)
    if isinstance(operator, ScanNode):
        return statistics.scan_docs(operator)
    raise TypeError(f"cannot estimate {type(operator).__name__}")


@dataclass
class PlannerConfig:
    tau_index: float = 10_000
    tau_route: float = 1_000_000
    tau_partition: float = 100_000
    index_ratio: float = 100.0
    workers: int = 2
    join_workers: int = 1
    batch_capacity: int = DEFAULT_CAPACITY
    # static mode: how many stages ahead parent scans may prefetch
    prefetch_depth: int = 1


def choose_strategy(join: JoinNode | str, parent_est: float, child_est: float,
                    topology: ClusterTopology | None = None, *, routing_ok: bool = False,
                    config: PlannerConfig | None = None) -> Strategy:
    if parent_est < 0 or child_est < 0:
        raise ValueError("estimates must be non-negative")
    config = config or PlannerConfig()
    kind = join.kind if isinstance(join, JoinNode) else join
    if kind == "inner":
        return Strategy.PARTITIONED_HASH
    if child_est <= config.tau_index and child_est <= parent_est / config.index_ratio:
        return Strategy.BROADCAST_INDEX
    if routing_ok and child_est <= config.tau_route:
        return Strategy.ROUTING
    if min(parent_est, child_est) > config.tau_partition:
        return Strategy.PARTITIONED_HASH
    return Strategy.BROADCAST_HASH


def static_decision(stage: Stage, statistics: Statistics, config: PlannerConfig | None = None,
                    topology: ClusterTopology | None = None, routing_ok: bool = False) -> dict:
    """Strategy for one join stage from pre-execution estimates only."""
    config = config or PlannerConfig()
    parent_est = statistics.scan_base(stage.parent)
    child_est = statistics.scan_docs(stage.join.child)
    strategy = choose_strategy(stage.join, parent_est, child_est, topology,
                               routing_ok=routing_ok, config=config)
    return {"strategy": str(strategy), "parent_est": round(parent_est, 3),
            "child_est": round(child_est, 3), "exact": False, "dep_cardinalities": {}}


def plan_strategies(plan, statistics: Statistics, config: PlannerConfig | None = None,
                    routing_fields: Mapping[str, str] | None = None) -> dict[int, dict]:
    """Static decisions for every join stage, without touching data.

    ``routing_fields`` maps index names to their (single-valued) routing field.
    """
    routing_fields = routing_fields or {}
    out = {}
    for st in build_stages(plan):
        if st.join is not None:
            ok = routing_fields.get(st.parent.index) == st.join.parent_key
            out[st.stage_id] = static_decision(st, statistics, config, routing_ok=ok)
    return out


# -- execution -------------------------------------------------------------------

@dataclass
class Relation:
    """Documents surviving a scan, plus output rows when the scan projects any."""

    docs: DocBitset
    columns: tuple[str, ...] = ()
    rows: dict[GlobalDocId, list[tuple]] | None = None


@dataclass
class StageOutcome:
    stage_id: int
    kind: str
    cardinality: int
    strategy: str | None = None
    cache: str = "-"               # hit | miss | bypass | off | -
    bitset: DocBitset | None = None
    pairs: list[tuple[GlobalDocId, GlobalDocId]] | None = None
    child: Relation | None = None
    relation: Relation | None = None
    join_stats: dict | None = None
    short_circuit: bool = False


@dataclass
class TraceEvent:
    t: float
    stage_id: int
    event: str
    info: dict = field(default_factory=dict)


class Trace:
    def __init__(self):
        self._events: list[TraceEvent] = []
        self._lock = threading.Lock()
        self._t0 = time.perf_counter()

    def add(self, stage_id: int, event: str, **info) -> None:
        with self._lock:
            self._events.append(TraceEvent(time.perf_counter() - self._t0, stage_id, event, info))

    @property
    def events(self) -> list[TraceEvent]:
        with self._lock:
            return list(self._events)

    def of(self, event: str) -> list[TraceEvent]:
        return [e for e in self.events if e.event == event]

    def interval(self, stage_id: int) -> tuple[float, float]:
        start = next(e.t for e in self.events if e.stage_id == stage_id and e.event == "start")
        end = next(e.t for e in self.events if e.stage_id == stage_id and e.event == "end")
        return start, end


@dataclass
class ExecutionStats:
    semi_joins_executed: int = 0
    inner_joins_executed: int = 0
    cache_hits: int = 0
    short_circuits: int = 0
    bytes_exchanged: int = 0
    by_operator: Counter = field(default_factory=Counter)

    @property
    def joins_executed(self) -> int:
        return self.semi_joins_executed + self.inner_joins_executed


@dataclass
class PlanResult:
    name: str
    columns: tuple[str, ...]
    rows: list[dict]
    docs: DocBitset
    # per row: scan label -> "<index>/<docid>" of every scan that contributed the row
    row_ids: list[dict] = field(default_factory=list)

    def multiset(self) -> Counter:
        return Counter(tuple(sorted((k, _hashable(v)) for k, v in r.items())) for r in self.rows)


def _hashable(v):
    return tuple(v) if isinstance(v, list) else v


@dataclass
class Execution:
    mode: str
    results: list[PlanResult]
    stages: list[Stage]
    outcomes: dict[int, StageOutcome]
    trace: Trace
    stats: ExecutionStats
    decisions: dict[int, dict]
    fold_report: list[FoldEntry] = field(default_factory=list)

    @property
    def result(self) -> PlanResult:
        return self.results[0]


ID_SUFFIX = "#id"


class Executor:
    """Runs a plan's stages on a bounded worker pool."""

    def __init__(self, snapshot: Snapshot, topology: ClusterTopology,
                 cache: SemanticCache | None = None, config: PlannerConfig | None = None,
                 cache_mode: str = "on", statistics: Statistics | None = None):
        if cache_mode not in ("on", "off", "bypass"):
            raise ValueError(f"cache mode must be on|off|bypass, got {cache_mode!r}")
        self.snapshot = snapshot
        self.topology = topology
        self.cache = cache if cache_mode != "off" else None
        self.cache_mode = cache_mode if cache is not None else "off"
        self.config = config or PlannerConfig()
        self.statistics = statistics or Statistics(snapshot)

    # public entry points
    def execute_adaptive(self, plan) -> Execution:
        return self._execute(plan, "adaptive")

    def execute_static(self, plan) -> Execution:
        return self._execute(plan, "static")

    def _execute(self, plan, mode: str) -> Execution:
        validate_plan(plan, self.snapshot)
        stages = build_stages(plan)
        by_id = {s.stage_id: s for s in stages}
        trace = Trace()
        stats = ExecutionStats()
        outcomes: dict[int, StageOutcome] = {}
        decisions: dict[int, dict] = {}
        lock = threading.Lock()
        prefetched: dict[int, Future] = {}

        for st in stages:
            if st.join is not None:
                check_key_types(self.snapshot, self._spec_for(st, EMPTY, EMPTY))

        if mode == "static":
            for st in stages:
                if st.join is not None:
                    decisions[st.stage_id] = self._static_decision(st)
                    trace.add(st.stage_id, "decide", **decisions[st.stage_id])

        dependents: dict[int, list[int]] = defaultdict(list)
        for st in stages:
            for d in st.deps:
                dependents[d].append(st.stage_id)

        def run_stage(st: Stage) -> StageOutcome:
            trace.add(st.stage_id, "start")
            outcome = self._run_stage(st, outcomes, decisions, trace, stats, lock, prefetched, mode)
            trace.add(st.stage_id, "end", cardinality=outcome.cardinality, cache=outcome.cache)
            return outcome

        remaining = {s.stage_id for s in stages}
        done: set[int] = set()
        running: dict[Future, int] = {}
        with ThreadPoolExecutor(max_workers=max(1, self.config.workers)) as pool:
            prefetch_pool = ThreadPoolExecutor(max_workers=max(1, self.config.workers)) if mode == "static" else None
            try:
                while remaining or running:
                    ready = sorted(sid for sid in remaining if by_id[sid].deps <= done)
                    for sid in ready:
                        remaining.discard(sid)
                        running[pool.submit(run_stage, by_id[sid])] = sid
                        if prefetch_pool is not None:
                            self._prefetch_ahead(sid, by_id, dependents, prefetched, prefetch_pool, trace)
                    if not running:
                        raise PlanError("stage dependency graph is not satisfiable")
                    finished, _ = wait(list(running), return_when=FIRST_COMPLETED)
                    for fut in finished:
                        sid = running.pop(fut)
                        try:
                            outcomes[sid] = fut.result()
                        except BaseException:
                            for other in running:
                                other.cancel()
                            raise
                        done.add(sid)
            finally:
                if prefetch_pool is not None:
                    prefetch_pool.shutdown(wait=True)

        results = []
        names = plan.names if isinstance(plan, FoldedPlan) else [plan.name]
        for r, root in enumerate(plan.roots):
            final = next(s for s in stages if r in s.roots)
            results.append(self._finish_root(root, final, outcomes,
                                             names[r] if r < len(names) else f"plan{r}"))
        fold = plan.report if isinstance(plan, FoldedPlan) else []
        return Execution(mode, results, stages, outcomes, trace, stats, decisions, fold)

    # -- planning helpers
    def _spec_for(self, st: Stage, parent_docs: DocBitset, child_docs: DocBitset) -> JoinSpec:
        j = st.join
        return JoinSpec(JoinSide(st.parent.index, j.parent_key, docs=parent_docs),
                        JoinSide(j.child.index, j.child_key, docs=child_docs), kind=j.kind)

    def _routing_ok(self, st: Stage) -> bool:
        return routing_applicable(self.snapshot, self._spec_for(st, EMPTY, EMPTY))

    def _static_decision(self, st: Stage) -> dict:
        return static_decision(st, self.statistics, self.config, self.topology,
                               routing_ok=self._routing_ok(st))

    def _prefetch_ahead(self, sid, by_id, dependents, prefetched, pool, trace) -> None:
        frontier = [sid]
        for _ in range(max(0, self.config.prefetch_depth)):
            nxt = []
            for s in frontier:
                for d in dependents.get(s, ()):
                    if d not in prefetched and by_id[d].join is not None:
                        st = by_id[d]
                        trace.add(d, "prefetch")
                        prefetched[d] = pool.submit(self.snapshot.evaluate_filter, st.parent.index, st.parent.filter)
                    nxt.append(d)
            frontier = nxt

    # -- stage execution
    def _run_stage(self, st: Stage, outcomes, decisions, trace, stats, lock, prefetched, mode) -> StageOutcome:
        if st.join is None:
            rel = self._relation(st.parent, st.input_stage_ids, outcomes, rows=st.parent.needs_rows)
            return StageOutcome(st.stage_id, st.kind, len(rel.docs), relation=rel)

        j = st.join
        child = self._relation(j.child, st.input_stage_ids, outcomes, rows=j.kind == "inner")
        fut = prefetched.get(st.stage_id)
        parent_docs = fut.result() if fut is not None else self.snapshot.evaluate_filter(
            st.parent.index, st.parent.filter)

        key = None
        cache_state = "off" if self.cache is None else self.cache_mode
        if j.kind == "semi" and self.cache is not None and self.cache_mode == "on":
            key = semantic_key(st.parent, j, self.snapshot.epochs)
            hit = self.cache.get(key)
            if hit is not None:
                with lock:
                    stats.cache_hits += 1
                trace.add(st.stage_id, "cache_hit")
                return StageOutcome(st.stage_id, "join", len(hit), cache="hit", bitset=hit)
            cache_state = "miss"

        if mode == "adaptive":
            dep_cards = {d: outcomes[d].cardinality for d in st.input_stage_ids}
            strategy = choose_strategy(j, float(len(parent_docs)), float(len(child.docs)), self.topology,
                                       routing_ok=self._routing_ok(st), config=self.config)
            decisions[st.stage_id] = {"strategy": str(strategy), "parent_est": float(len(parent_docs)),
                                      "child_est": float(len(child.docs)), "exact": True,
                                      "dep_cardinalities": dep_cards}
            trace.add(st.stage_id, "decide", **decisions[st.stage_id])
        else:
            strategy = Strategy(decisions[st.stage_id]["strategy"])

        if not child.docs or not parent_docs:
            with lock:
                stats.short_circuits += 1
            trace.add(st.stage_id, "short_circuit")
            outcome = StageOutcome(st.stage_id, "join", 0, str(strategy), cache_state,
                                   bitset=EMPTY if j.kind == "semi" else None,
                                   pairs=[] if j.kind == "inner" else None, child=child,
                                   short_circuit=True)
            if key is not None:
                self.cache.put(key, EMPTY)
            return outcome

        spec = self._spec_for(st, parent_docs, child.docs)
        result: JoinResult = execute_join(strategy, self.snapshot, spec, self.topology,
                                          workers=self.config.join_workers,
                                          capacity=self.config.batch_capacity)
        with lock:
            if j.kind == "semi":
                stats.semi_joins_executed += 1
            else:
                stats.inner_joins_executed += 1
            stats.by_operator[st.canonical] += 1
            stats.bytes_exchanged += result.stats.bytes_exchanged
        if j.kind == "semi":
            if self.cache is not None:
                self.cache.record_computed()
            if key is not None:
                self.cache.put(key, result.bitset)
            return StageOutcome(st.stage_id, "join", len(result.bitset), str(strategy), cache_state,
                                bitset=result.bitset, join_stats=result.stats.as_dict())
        pairs = [(p, c) for p, c, _ in result.tuples]
        return StageOutcome(st.stage_id, "join", len(pairs), str(strategy), cache_state,
                            pairs=pairs, child=child, join_stats=result.stats.as_dict())

    def _relation(self, scan: ScanNode, input_ids: Sequence[int], outcomes, rows: bool) -> Relation:
        docs = self.snapshot.evaluate_filter(scan.index, scan.filter)
        semis = [outcomes[sid].bitset for j, sid in zip(scan.joins, input_ids) if j.kind == "semi"]
        inners = [(j, outcomes[sid]) for j, sid in zip(scan.joins, input_ids) if j.kind == "inner"]
        if semis:
            if scan.combine == "or":
                docs = docs & reduce(lambda a, b: a | b, semis)
            else:
                docs = reduce(lambda a, b: a & b, semis, docs)
        grouped = []
        for _, out in inners:
            by_parent: dict[GlobalDocId, list[GlobalDocId]] = defaultdict(list)
            for p, c in out.pairs:
                by_parent[p].append(c)
            grouped.append((out, by_parent))
            docs = docs & DocBitset.from_ids(by_parent)
        if not rows:
            return Relation(docs)

        label = scan.label
        columns = [f"{label}.{ID_SUFFIX}"] + [f"{label}.{f}" for f in scan.fields]
        for out, _ in grouped:
            columns.extend(out.child.columns)
        table: dict[GlobalDocId, list[tuple]] = {}
        for doc in docs:
            own = (f"{scan.index}/{doc}",) + tuple(
                project(self.snapshot.values(scan.index, doc, f)) for f in scan.fields)
            combos = [own]
            for out, by_parent in grouped:
                ext = [row for c in by_parent.get(doc, ()) for row in out.child.rows.get(c, ())]
                combos = [a + b for a in combos for b in ext]
            if combos:
                table[doc] = combos
        return Relation(docs, tuple(columns), table)

    def _finish_root(self, root: ScanNode, final: Stage, outcomes, name: str) -> PlanResult:
        if final.join is None:
            rel = outcomes[final.stage_id].relation
        else:
            # a root with exactly one join finishes at that join's stage
            rel = self._relation(root, (final.stage_id,), outcomes, rows=True)
        visible = [i for i, c in enumerate(rel.columns) if not c.endswith(ID_SUFFIX)]
        ids = [i for i, c in enumerate(rel.columns) if c.endswith(ID_SUFFIX)]
        rows, row_ids = [], []
        for doc in rel.docs:
            for row in (rel.rows or {}).get(doc, ()):
                rows.append({rel.columns[i]: row[i] for i in visible})
                row_ids.append({rel.columns[i][:-len(ID_SUFFIX) - 1]: row[i] for i in ids})
        return PlanResult(name, tuple(rel.columns[i] for i in visible), rows, rel.docs, row_ids)


def execute_adaptive(plan, snapshot: Snapshot, topology: ClusterTopology,
                     cache: SemanticCache | None = None, **kwargs) -> Execution:
    return Executor(snapshot, topology, cache, **kwargs).execute_adaptive(plan)


def execute_static(plan, snapshot: Snapshot, topology: ClusterTopology,
                   cache: SemanticCache | None = None, **kwargs) -> Execution:
    return Executor(snapshot, topology, cache, **kwargs).execute_static(plan)


# -- EXPLAIN ------------------------------------------------------------------

def explain(plan, execution: Execution | None = None, *, statistics: Statistics | None = None,
            cache: SemanticCache | None = None) -> str:
    """Deterministic text rendering; timings are deliberately omitted."""
    stages = execution.stages if execution is not None else build_stages(plan)
    lines = []
    names = plan.names if isinstance(plan, FoldedPlan) else [plan.name]
    mode = execution.mode if execution is not None else "none"
    lines.append(f"PLAN {' + '.join(names)} mode={mode} stages={len(stages)}")
    for st in stages:
        deps = ",".join(str(d) for d in sorted(st.deps)) or "-"
        parts = [f"STAGE {st.stage_id} deps=[{deps}] {st.describe()}"]
        if execution is not None:
            dec = execution.decisions.get(st.stage_id)
            out = execution.outcomes.get(st.stage_id)
            if dec is not None:
                parts.append(f"strategy={dec['strategy']}")
                parts.append(f"est(parent={_num(dec['parent_est'])},child={_num(dec['child_est'])})")
            elif out is not None and out.strategy:
                parts.append(f"strategy={out.strategy}")
            if out is not None:
                parts.append(f"actual={out.cardinality}")
                if st.join is not None and st.join.kind == "semi":
                    parts.append(f"cache={out.cache}")
        elif statistics is not None:
            parts.append(f"est={_num(estimate_cardinality(st, statistics))}")
        lines.append(" ".join(parts))
    report = plan.report if isinstance(plan, FoldedPlan) else []
    if report:
        for e in report:
            merged = ",".join(str(m) for m in e.merged)
            lines.append(f"FOLD stages {e.kept}+{merged} -> shared: {e.operator}")
    else:
        lines.append("FOLD none")
    if cache is not None:
        s = cache.stats
        lines.append(f"CACHE hits={s.hits} misses={s.misses} semi_joins_computed={s.semi_joins_computed}")
    return "\n".join(lines)


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else f"{x:.3f}"
