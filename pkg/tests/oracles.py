"""Brute-force reference implementations.

Everything here works on raw documents with plain Python loops and shares
no execution code with the engine: no bitsets, no exchange, no planner.
Filters are evaluated per document with ``Filter.matches``.
"""

from __future__ import annotations

import itertools
from collections import Counter, defaultdict, deque

from fedl.docid import GlobalDocId
from fedl.filters import Filter


def vals(raw) -> tuple:
    if raw is None:
        return ()
    if isinstance(raw, (list, tuple)):
        return tuple(raw)
    return (raw,)


def _proj(raw):
    v = vals(raw)
    if not v:
        return None
    return v[0] if len(v) == 1 else tuple(v)


def docs_of(snapshot, index: str) -> list[tuple[GlobalDocId, dict]]:
    """Every visible document with its id, enumerated segment by segment."""
    out = []
    for shard, seg in snapshot.view(index).segments():
        for ordinal, doc in enumerate(seg.docs):
            out.append((GlobalDocId(shard, seg.segment_id, ordinal), doc))
    return sorted(out, key=lambda p: p[0])


def _keep(docs, flt: Filter | None, restrict=None):
    out = []
    for did, doc in docs:
        if flt is not None and not flt.matches(doc):
            continue
        if restrict is not None and did not in restrict:
            continue
        out.append((did, doc))
    return out


# -- joins ---------------------------------------------------------------------------

def join_oracle(parent_docs, child_docs, spec):
    """Nested loops over (id, doc) lists; returns a set (semi) or sorted list (inner)."""
    parents = _keep(parent_docs, spec.parent.filter,
                    None if spec.parent.docs is None else set(spec.parent.docs))
    children = _keep(child_docs, spec.child.filter,
                     None if spec.child.docs is None else set(spec.child.docs))
    if spec.kind == "semi":
        return {pid for pid, p in parents
                if any(set(vals(p.get(spec.parent.key))) & set(vals(c.get(spec.child.key)))
                       for _, c in children)}
    out = []
    for pid, p in parents:
        pk = set(vals(p.get(spec.parent.key)))
        for cid, c in children:
            if pk & set(vals(c.get(spec.child.key))):
                out.append((pid, cid, tuple(_proj(c.get(f)) for f in spec.child_fields)))
    return sorted(out)


# -- paths ---------------------------------------------------------------------------

def _linked(a: dict, out_f: str, b: dict, in_f: str) -> bool:
    return bool(set(vals(a.get(out_f))) & set(vals(b.get(in_f))))


def paths_of_length(snapshot, spec, length: int) -> list[tuple]:
    """BFS forward over positions keeping predecessor lists, then backtrack from targets."""
    positions, hops = spec.positions(length)
    layers = [_keep(docs_of(snapshot, p.index), p.filter) for p in positions]
    # forward reachability with predecessor lists
    reach = [{did: [] for did, _ in layers[0]}]
    by_id = [dict(layer) for layer in layers]
    for k, (out_f, in_f) in enumerate(hops):
        incoming = defaultdict(set)
        for v, vdoc in layers[k + 1]:
            for value in vals(vdoc.get(in_f)):
                incoming[value].add(v)
        nxt: dict = defaultdict(list)
        frontier = deque(reach[k])
        while frontier:
            u = frontier.popleft()
            targets = set()
            for value in vals(by_id[k][u].get(out_f)):
                targets |= incoming.get(value, set())
            for v in targets:
                nxt[v].append(u)
        reach.append(dict(nxt))
    names = [p.index for p in positions]
    paths = []

    def back(k: int, suffix: list):
        if k == 0:
            paths.append(tuple(zip(names, reversed(suffix))))
            return
        for u in reach[k][suffix[-1]]:
            suffix.append(u)
            back(k - 1, suffix)
            suffix.pop()

    for target in reach[-1]:
        back(len(positions) - 1, [target])
    return sorted(paths)


def shortest_paths_oracle(snapshot, spec) -> tuple[int | None, list[tuple]]:
    for length in spec.lengths():
        found = paths_of_length(snapshot, spec, length)
        if found:
            return length, found
    return None, []


def layer_oracle(snapshot, spec, length: int) -> list[set]:
    """Position-k members of any valid path of this length."""
    paths = paths_of_length(snapshot, spec, length)
    n = len(spec.positions(length)[0])
    return [{p[k][1] for p in paths} for k in range(n)]


def path_ids(paths) -> list[tuple]:
    return sorted(tuple(p.steps) for p in paths)


# -- pattern queries -----------------------------------------------------------------

def pattern_bindings(snapshot, graph, columns, params=None) -> dict:
    """Distinct (selected ids, values) of one pattern graph by backtracking."""
    slots = graph.slots
    candidates = []
    for s in slots:
        flt = s.filter
        if params is not None and flt.params():
            flt = flt.bind(params)
        candidates.append(_keep(docs_of(snapshot, s.info.index), flt))
    links = defaultdict(list)
    for a, fa, b, fb in graph.links:
        links[a].append((fa, b, fb))
        links[b].append((fb, a, fa))
    # visit order: smallest candidate set first, then grow along links
    start = min(range(len(slots)), key=lambda i: len(candidates[i]))
    order, seen = [], {start}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        order.append(s)
        for _, n, _ in links[s]:
            if n not in seen:
                seen.add(n)
                queue.append(n)
    inverted: dict[tuple[int, str], dict] = {}
    for s in range(len(slots)):
        for f, _, _ in links[s]:
            table = defaultdict(list)
            for did, doc in candidates[s]:
                for v in vals(doc.get(f)):
                    table[v].append((did, doc))
            inverted[(s, f)] = table
    selected_vars = list(dict.fromkeys(c.var for c in columns))
    out: dict = {}
    binding: dict[int, tuple] = {}

    def options(s):
        bound = [(f, n, nf) for f, n, nf in links[s] if n in binding]
        if not bound:
            return candidates[s]
        f, n, nf = bound[0]
        seen_ids, pool = set(), []
        for v in vals(binding[n][1].get(nf)):
            for did, doc in inverted[(s, f)].get(v, ()):
                if did not in seen_ids:
                    seen_ids.add(did)
                    pool.append((did, doc))
        return [(did, doc) for did, doc in pool
                if all(_linked(doc, f2, binding[n2][1], nf2) for f2, n2, nf2 in bound[1:])]

    def go(i):
        if i == len(order):
            ids = tuple(binding[graph.vars[v]][0] for v in selected_vars)
            values = tuple(_proj(binding[graph.vars[c.var]][1].get(c.field)) for c in columns)
            out[(ids, tuple(map(repr, values)))] = values
            return
        s = order[i]
        for did, doc in options(s):
            binding[s] = (did, doc)
            go(i + 1)
            del binding[s]

    go(0)
    return out


def query_oracle(snapshot, ast, catalog, params=None) -> Counter:
    """Union over every repetition count of the pattern's quantified groups."""
    from fedl.querylang import SelectColumn, _expand, _groups, build_pattern_graph

    columns = [SelectColumn(i.var, i.field) for i in ast.select]
    groups = _groups(ast.elements)
    rows: dict = {}
    for combo in itertools.product(*[range(g.min, g.max + 1) for g in groups]):
        reps = {id(g): r for g, r in zip(groups, combo)}
        graph = build_pattern_graph(_expand(ast.elements, reps, itertools.count(1)), catalog)
        rows.update(pattern_bindings(snapshot, graph, columns, params))
    return Counter(rows.values())
