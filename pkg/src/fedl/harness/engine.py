"""One object wiring store, topology, cache and planner for query text."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping

from ..cache import SemanticCache
from ..exchange import ClusterTopology
from ..pathquery import PathEngine, SjdCounters, decompose
from ..planner import Execution, Executor, FoldedPlan, PlannerConfig, explain, fold_plan
from ..querylang import PathPlan, UnionPlan, lower_to_plan, parse_query
from ..storage import Store


@dataclass
class QueryOutcome:
    kind: str                               # "rows" | "paths"
    columns: list[str] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)
    paths: list[list[dict]] = field(default_factory=list)
    path_length: int | None = None
    counters: SjdCounters | None = None
    execution: Execution | None = None
    plan: FoldedPlan | None = None
    timings: dict[str, float] = field(default_factory=dict)

    def multiset(self):
        from collections import Counter
        if self.kind == "paths":
            return Counter(tuple(s["id"] for s in p) for p in self.paths)
        return Counter(tuple(r[c] for c in self.columns) for r in self.rows)

    def strategies(self) -> dict[int, str]:
        if self.execution is None:
            return {}
        return {sid: d["strategy"] for sid, d in self.execution.decisions.items()}


class Engine:
    def __init__(self, store: Store | None = None, nodes: int = 1, workers: int = 2,
                 cache_mode: str = "on", planner: str = "adaptive",
                 config: PlannerConfig | None = None, latency_s: float = 0.0,
                 cache_budget: int | None = None):
        if planner not in ("adaptive", "static"):
            raise ValueError(f"planner must be adaptive|static, got {planner!r}")
        if cache_mode not in ("on", "off", "bypass"):
            raise ValueError(f"cache must be on|off|bypass, got {cache_mode!r}")
        self.store = store or Store()
        self.topology = ClusterTopology.with_nodes(nodes, latency_s=latency_s)
        self.config = config or PlannerConfig(workers=workers)
        self.planner = planner
        self.cache_mode = cache_mode
        kwargs = {} if cache_budget is None else {"budget_bytes": cache_budget}
        self.cache = SemanticCache.for_store(self.store, **kwargs)

    def _executor(self, snapshot, cache_mode: str | None = None) -> Executor:
        mode = cache_mode or self.cache_mode
        cache = None if mode == "off" else self.cache
        return Executor(snapshot, self.topology, cache, self.config, cache_mode=mode)

    def query(self, text: str, params: Mapping | None = None, planner: str | None = None,
              cache_mode: str | None = None) -> QueryOutcome:
        t0 = time.perf_counter()
        ast = parse_query(text)
        lowered = lower_to_plan(ast, params=params or {})
        t1 = time.perf_counter()
        snapshot = self.store.open_snapshot()
        if isinstance(lowered, PathPlan):
            out = self._run_paths(lowered, snapshot, planner or self.planner, cache_mode)
        else:
            out = self._run_rows(lowered, snapshot, planner or self.planner, cache_mode)
        out.timings = {"plan_s": t1 - t0, "execute_s": time.perf_counter() - t1}
        return out

    def _run_rows(self, lowered: UnionPlan, snapshot, planner: str, cache_mode) -> QueryOutcome:
        folded = fold_plan(lowered.plans)
        ex = self._executor(snapshot, cache_mode)
        execution = ex.execute_adaptive(folded) if planner == "adaptive" else ex.execute_static(folded)
        columns = [c.name for c in lowered.columns]
        seen = {}
        for res in execution.results:
            for row, ids in zip(res.rows, res.row_ids):
                values = tuple(row[c] for c in columns)
                key = tuple(ids[v] for v in lowered.select_vars) + tuple(map(repr, values))
                seen.setdefault(key, dict(zip(columns, values)))
        rows = [seen[k] for k in sorted(seen)]
        return QueryOutcome("rows", columns, rows, execution=execution, plan=folded)

    def _run_paths(self, lowered: PathPlan, snapshot, planner: str, cache_mode) -> QueryOutcome:
        mode = cache_mode or self.cache_mode
        cache = self.cache if mode == "on" else SemanticCache.for_store(self.store)
        engine = PathEngine(snapshot, self.topology, cache, self.config, planner=planner)
        length, paths = engine.run(lowered.spec)
        records = [p.to_record() for p in paths]
        return QueryOutcome("paths", [lowered.path_var], paths=records, path_length=length,
                            counters=engine.counters)

    def explain(self, text: str, params: Mapping | None = None, planner: str | None = None) -> str:
        out = self.query(text, params, planner)
        if out.kind == "rows":
            return explain(out.plan, out.execution, cache=self.cache)
        lowered = lower_to_plan(parse_query(text), params=params or {})
        lines = [f"PATHS semantics={lowered.spec.semantics} lengths={lowered.spec.lengths()} "
                 f"answer_length={out.path_length}"]
        if out.path_length is not None:
            for k, q in enumerate(decompose(lowered.spec, out.path_length), start=1):
                lines.append(f"q{k}: {q.index}{'' if q.filter.is_match_all else '[' + q.filter.render() + ']'} "
                             f"semi_joins={_count(q)}")
        c = out.counters
        lines.append(f"SJD semi_joins_executed={c.semi_joins_executed} cache_hits={c.cache_hits} "
                     f"lengths_tested={c.lengths_tested} paths_emitted={c.paths_emitted}")
        return "\n".join(lines)


def _count(node) -> int:
    return sum(1 + _count(j.child) for j in node.joins)
