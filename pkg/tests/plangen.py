"""Random logical plans over a small three-index store, plus a brute-force evaluator."""

from __future__ import annotations

import random
from collections import Counter

from fedl.filters import Filter, Range, Term
from fedl.planner import LogicalPlan, ScanNode, inner, semi
from fedl.storage import Store
from oracles import _proj, docs_of, vals

INDICES = ("X", "Y", "Z")
KEYS = ("k", "m")


def plan_store(rng: random.Random, n: int = 120) -> Store:
    st = Store()
    for name in INDICES:
        docs = [{"k": rng.randrange(12), "m": rng.randrange(12), "t": rng.choice("abc"),
                 "v": rng.randrange(100)} for _ in range(rng.randint(0, n))]
        st.load(name, docs, rng.randint(1, 3), rng.choice(KEYS))
    return st


def _filter(rng: random.Random) -> Filter:
    r = rng.random()
    if r < 0.4:
        return Filter()
    if r < 0.7:
        return Filter.of(Term("t", rng.choice("abc")))
    lo = rng.randrange(80)
    return Filter.of(Range("v", lo, lo + rng.randint(5, 60)))


def random_scan(rng: random.Random, depth: int, pool: list, rows: bool = False) -> ScanNode:
    # occasionally reuse an earlier subtree so folding has something to merge
    if pool and not rows and rng.random() < 0.3:
        return rng.choice(pool)
    combine = "and"
    joins = []
    if depth > 0:
        for _ in range(rng.choice((0, 1, 1, 2))):
            kind = "inner" if rows and rng.random() < 0.3 else "semi"
            child = random_scan(rng, depth - 1, pool, rows=kind == "inner")
            make = inner if kind == "inner" else semi
            joins.append(make(rng.choice(KEYS), rng.choice(KEYS), child))
        if len(joins) > 1 and all(j.kind == "semi" for j in joins) and rng.random() < 0.4:
            combine = "or"
    fields = (rng.choice(("v", "t")),) if rows else ()
    node = ScanNode(rng.choice(INDICES), _filter(rng), fields, tuple(joins), combine,
                    alias=f"s{rng.getrandbits(24)}" if rows else None)
    if not rows:
        pool.append(node)
    return node


def random_plan(rng: random.Random, name: str = "plan", depth: int = 3, pool: list | None = None) -> LogicalPlan:
    return LogicalPlan(random_scan(rng, depth, [] if pool is None else pool, rows=True), name)


def evaluate(snapshot, scan: ScanNode) -> dict:
    """doc id -> list of row tuples; semi-only scans yield a single empty row per doc."""
    out = {}
    subs = [(j, evaluate(snapshot, j.child)) for j in scan.joins]
    child_docs = {id(j): {did: doc for did, doc in docs_of(snapshot, j.child.index)} for j, _ in subs}
    for did, doc in docs_of(snapshot, scan.index):
        if not scan.filter.matches(doc):
            continue
        semis, combos = [], [tuple(_proj(doc.get(f)) for f in scan.fields)]
        for j, res in subs:
            keys = set(vals(doc.get(j.parent_key)))
            hits = [c for c in res if keys & set(vals(child_docs[id(j)][c].get(j.child_key)))]
            if j.kind == "semi":
                semis.append(bool(hits))
            else:
                combos = [a + b for a in combos for c in hits for b in res[c]]
        if semis and not (any(semis) if scan.combine == "or" else all(semis)):
            continue
        if combos:
            out[did] = combos
    return out


def columns(scan: ScanNode) -> list[str]:
    cols = [f"{scan.label}.{f}" for f in scan.fields]
    for j in scan.joins:
        if j.kind == "inner":
            cols.extend(columns(j.child))
    return cols


def plan_oracle(snapshot, plan: LogicalPlan) -> Counter:
    """Same shape as ``PlanResult.multiset``."""
    cols = columns(plan.root)
    rows = [row for rs in evaluate(snapshot, plan.root).values() for row in rs]
    return Counter(tuple(sorted(zip(cols, r))) for r in rows)
