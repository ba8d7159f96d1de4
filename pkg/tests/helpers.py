"""Small builders shared by the test modules."""

from __future__ import annotations

import random
from collections import defaultdict

from fedl.filters import Filter, Range, Term
from fedl.pathquery import ALL_SHORTEST, PathQuerySpec, PathSchema
from fedl.planner import LogicalPlan, ScanNode, semi
from fedl.storage import Store

GRAPH = "G"


def graph_store(n: int, edges, shards: int = 2, store: Store | None = None) -> Store:
    """Nodes ``0..n-1`` as documents ``{"id", "out": [targets]}``."""
    out = defaultdict(set)
    for u, v in edges:
        out[u].add(v)
    store = store or Store()
    store.load(GRAPH, [{"id": i, "out": sorted(out[i])} for i in range(n)], shards, "id")
    return store


def _node_filter(x) -> Filter:
    if x is None:
        return Filter()
    if isinstance(x, tuple):
        return Filter.of(Range("id", x[0], x[1], True, True))
    return Filter.of(Term("id", x))


def endpoint_spec(src, dst, max_repeat: int, semantics: str = ALL_SHORTEST,
                  min_repeat: int = 1) -> PathQuerySpec:
    """Endpoints are a node id, an inclusive ``(lo, hi)`` id range, or None for any node."""
    return PathQuerySpec(PathSchema.uniform(GRAPH, "out", "id"), _node_filter(src), _node_filter(dst),
                         min_repeat, max_repeat, semantics)


def random_graph(rng: random.Random, n: int, branching: int, max_edges: int = 10_000):
    edges = set()
    for u in range(n):
        for _ in range(rng.randint(0, branching)):
            if len(edges) >= max_edges:
                break
            edges.add((u, rng.randrange(n)))
    return sorted(edges)


def layered_graph(b: int, l: int, single_target: bool = True):
    """One source then ``l`` layers of ``b`` nodes, fully linked layer to layer.

    With ``single_target`` the last layer is one node and there are
    ``b**(l-1)`` source-target paths; otherwise the target is every node of
    the last layer and there are ``b**l``. Returns ``(n, edges, src, targets)``
    where ``targets`` is a node id or an inclusive id range.
    """
    layers = [[0]]
    nxt = 1
    for _ in range(l - 1):
        layers.append(list(range(nxt, nxt + b)))
        nxt += b
    if single_target:
        layers.append([nxt])
        target = nxt
    else:
        layers.append(list(range(nxt, nxt + b)))
        target = (nxt, nxt + b - 1)
    edges = [(u, v) for a, c in zip(layers, layers[1:]) for u in a for v in c]
    return layers[-1][-1] + 1, edges, 0, target


def reuse_instance(rng: random.Random):
    """A random graph with a guaranteed path so every instance has an answer."""
    n = rng.randint(10, 60)
    edges = random_graph(rng, n, rng.randint(1, 4))
    l_star = rng.randint(1, 5)
    chain = rng.sample(range(n), l_star + 1)
    edges = sorted(set(edges) | set(zip(chain, chain[1:])))
    return graph_store(n, edges, shards=rng.randint(1, 3)), endpoint_spec(chain[0], chain[-1], 6)


def people_store() -> Store:
    """Entities and contracts of the running example: people, phones, calls."""
    st = Store()
    st.load("people", [
        {"name": "Alice", "ssn": "S1"},
        {"name": "Bob", "ssn": "S2"},
        {"name": "Charlie", "ssn": "S3"},
        {"name": "Dana", "ssn": "S4"},
    ], 1, "ssn")
    st.load("phones", [
        {"phone": "+1", "ssn": "S1"},
        {"phone": "+2", "ssn": "S2"},
        {"phone": "+3", "ssn": "S3"},
        {"phone": "+4", "ssn": "S1"},
    ], 2, "phone")
    st.load("calls", [
        {"caller": "+1", "callee": "+2", "date": 20240101, "duration": 61},
        {"caller": "+2", "callee": "+3", "date": 20240102, "duration": 5},
        {"caller": "+3", "callee": "+1", "date": 20240103, "duration": 300},
    ], 2, "caller")
    return st


def five_stage_store(seed: int = 0) -> Store:
    """Phones (A), people's posts (B) and calls (C) wired like the staged-plan example."""
    rng = random.Random(seed)
    s = Store()
    s.load("A", [{"phone": i, "person": rng.randrange(50)} for i in range(300)], 3, "phone")
    s.load("B", [{"person": rng.randrange(80), "text": rng.choice(["crime", "cat", "dog"])}
                 for _ in range(400)], 2, "person")
    s.load("C", [{"caller": rng.randrange(300), "callee": rng.randrange(300), "d": rng.randrange(100)}
                 for _ in range(2000)], 4, "caller")
    return s


def _ab() -> ScanNode:
    return ScanNode("A", joins=(semi("person", "person", ScanNode("B", Filter.of(Term("text", "crime")))),))


def five_stage_plan() -> LogicalPlan:
    root = ScanNode("C", fields=("d",), joins=(semi("caller", "phone", _ab()), semi("callee", "phone", _ab())),
                    combine="or", alias="c")
    return LogicalPlan(root, "five_stage")
