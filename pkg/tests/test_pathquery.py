import random
import time

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedl.cache import SemanticCache
from fedl.exchange import ClusterTopology
from fedl.harness.generators import gen_finbench_mini
from fedl.harness.tcr import TCR3, TCR5
from fedl.pathquery import (ALL_SHORTEST, ALL_UP_TO_L, BaselineStats, BudgetExhausted, Hop, LayerSets, PathEngine,
                            PathQueryError, PathQuerySpec, PathSchema, Segment, count_semi_joins, decompose,
                            inner_join_chain_baseline)
from fedl.planner import scan_canonical
from fedl.querylang import lower_to_plan, parse_query
from helpers import GRAPH, endpoint_spec, graph_store, layered_graph, random_graph, reuse_instance
from oracles import layer_oracle, path_ids, paths_of_length, shortest_paths_oracle


def ids(snapshot, docs) -> set:
    return {snapshot.values(GRAPH, d, "id")[0] for d in docs}


def node_path(snapshot, path) -> list:
    return [snapshot.values(GRAPH, d, "id")[0] for d in path.ids]


def engine(store) -> PathEngine:
    return PathEngine(store.open_snapshot(), ClusterTopology.with_nodes(2))


# -- decomposition

def _shape(node) -> str:
    """Index names and join keys only, as a nested string."""
    inner = ",".join(f"{j.parent_key}={j.child_key}:{_shape(j.child)}" for j in node.joins)
    return f"{node.index}({inner})"


def test_decompose_length_three():
    schema = PathSchema("D1", prefix=Segment("D1", (Hop("o", "D2", "i"), Hop("o", "D3", "i"), Hop("o", "D4", "i"))))
    qs = decompose(schema, 3)
    assert [_shape(q) for q in qs] == [
        "D1(o=i:D2(o=i:D3(o=i:D4())))",
        "D2(i=o:D1(),o=i:D3(o=i:D4()))",
        "D3(i=o:D2(i=o:D1()),o=i:D4())",
        "D4(i=o:D3(i=o:D2(i=o:D1())))",
    ]
    assert all(count_semi_joins(q) == 3 for q in qs)


def test_decompose_length_one():
    schema = PathSchema("D1", prefix=Segment("D1", (Hop("o", "D2", "i"),)))
    assert [_shape(q) for q in decompose(schema, 1)] == ["D1(o=i:D2())", "D2(i=o:D1())"]


@pytest.mark.parametrize("length", range(1, 8))
def test_decompose_counts_and_shared_arms(length):
    qs = decompose(endpoint_spec(0, 1, 8), length)
    assert len(qs) == length + 1 and all(count_semi_joins(q) == length for q in qs)
    # interior queries reuse the end queries' arms: 2l distinct semi-join subtrees overall
    arms = set()

    def collect(node):
        for j in node.joins:
            arms.add((node.index, node.filter.canonical(), j.parent_key, j.child_key, scan_canonical(j.child)))
            collect(j.child)

    for q in qs:
        collect(q)
    assert len(arms) == 2 * length


def test_spec_validation():
    with pytest.raises(PathQueryError):
        endpoint_spec(0, 1, 2, min_repeat=3)
    with pytest.raises(PathQueryError):
        endpoint_spec(0, 1, 0, min_repeat=0)
    with pytest.raises(PathQueryError):
        endpoint_spec(0, 1, 2, semantics="ANY")
    with pytest.raises(PathQueryError):
        decompose(endpoint_spec(0, 1, 2), 3)
    assert endpoint_spec(0, 1, 3, min_repeat=0).lengths() == [1, 2, 3]


# -- reachability and layers

def test_reachability_small():
    s = graph_store(2, [(0, 1)])
    eng = engine(s)
    assert eng.reachability_test(endpoint_spec(0, 1, 2), 1)
    assert not eng.reachability_test(endpoint_spec(0, 1, 2), 2)


def test_diamond_layers_and_paths():
    s = graph_store(4, [(0, 1), (0, 2), (1, 3), (2, 3)])
    snap = s.open_snapshot()
    eng = PathEngine(snap)
    layers = eng.compute_layer_sets(endpoint_spec(0, 3, 2), 2)
    assert [ids(snap, layers[k]) for k in (1, 2, 3)] == [{0}, {1, 2}, {3}]
    paths = list(eng.materialize_paths(layers))
    assert [node_path(snap, p) for p in paths] == [[0, 1, 3], [0, 2, 3]]
    base = list(inner_join_chain_baseline(snap, endpoint_spec(0, 3, 2), 2))
    assert path_ids(base) == path_ids(paths)


def test_dead_end_pruned():
    # 0 -> 1 -> 3 and a dead end 0 -> 2
    s = graph_store(4, [(0, 1), (1, 3), (0, 2)])
    snap = s.open_snapshot()
    layers = PathEngine(snap).compute_layer_sets(endpoint_spec(0, 3, 2), 2)
    assert ids(snap, layers[2]) == {1}


def test_empty_layer_yields_no_paths():
    s = graph_store(3, [(0, 1)])
    snap = s.open_snapshot()
    eng = PathEngine(snap)
    layers = eng.compute_layer_sets(endpoint_spec(0, 2, 2), 2)
    assert layers.total == 0 and list(eng.materialize_paths(layers)) == []


def test_bipartite_three_by_three():
    # source 0, two 3-wide layers fully linked, target 7
    a, b = [1, 2, 3], [4, 5, 6]
    edges = [(0, x) for x in a] + [(x, y) for x in a for y in b] + [(y, 7) for y in b]
    s = graph_store(8, edges)
    res = PathEngine(s.open_snapshot()).all_shortest_paths(endpoint_spec(0, 7, 3))
    assert res.length == 3 and len(list(res.paths)) == 9


def test_source_equals_target_is_empty():
    s = graph_store(2, [(0, 1), (1, 0)])
    res = PathEngine(s.open_snapshot()).all_shortest_paths(endpoint_spec(0, 0, 3))
    # the cycle of length 2 qualifies; the empty path does not
    assert res.length == 2
    s = graph_store(2, [])
    res = PathEngine(s.open_snapshot()).all_shortest_paths(endpoint_spec(0, 0, 3))
    assert res.length is None and list(res.paths) == []


def test_unreachable_tests_every_length():
    s = graph_store(10, [(i, i + 1) for i in range(8)])
    eng = engine(s)
    res = eng.all_shortest_paths(endpoint_spec(0, 9, 6))
    assert res.length is None and list(res.paths) == []
    assert eng.counters.lengths_tested == 6


def test_paths_up_to_chain_plus_shortcut():
    s = graph_store(3, [(0, 1), (1, 2), (0, 2)])
    snap = s.open_snapshot()
    got = list(PathEngine(snap).paths_up_to(endpoint_spec(0, 2, 2, ALL_UP_TO_L)))
    assert [node_path(snap, p) for p in got] == [[0, 2], [0, 1, 2]]
    assert [p.length for p in got] == [1, 2]


def test_single_hop_equals_join():
    rng = random.Random(3)
    n = 60
    s = graph_store(n, random_graph(rng, n, 4))
    snap = s.open_snapshot()
    spec = PathQuerySpec(PathSchema.uniform(GRAPH, "out", "id"), max_repeat=1, semantics=ALL_UP_TO_L)
    sjd = path_ids(PathEngine(snap).paths_up_to(spec))
    assert sjd == path_ids(inner_join_chain_baseline(snap, spec, 1)) == paths_of_length(snap, spec, 1)


# -- baseline and explosion

def test_layered_graph_exhausts_baseline_but_not_sjd():
    b, l = 8, 6
    n, edges, src, dst = layered_graph(b, l, single_target=False)
    s = graph_store(n, edges)
    snap = s.open_snapshot()
    spec = endpoint_spec(src, dst, l)
    with pytest.raises(BudgetExhausted) as err:
        for _ in inner_join_chain_baseline(snap, spec, l, budget=1_000_000):
            pass
    assert err.value.needed > 1_000_000
    t0 = time.perf_counter()
    eng = PathEngine(snap)
    res = eng.all_shortest_paths(spec)
    count = sum(1 for _ in res.paths)
    elapsed = time.perf_counter() - t0
    assert res.length == l and count == b ** l
    assert eng.counters.peak_live_tuples <= eng.live_tuple_bound(spec, l)
    assert elapsed < 10


def test_baseline_budget_bookkeeping():
    n, edges, src, dst = layered_graph(3, 3)
    s = graph_store(n, edges)
    stats = BaselineStats()
    paths = list(inner_join_chain_baseline(s.open_snapshot(), endpoint_spec(src, dst, 3), 3, stats=stats))
    assert len(paths) == 9 and 0 < stats.peak_live_cells <= 1_000_000


def test_tcr5_matches_baseline():
    ds = gen_finbench_mini()
    for params in ds.params:
        spec = lower_to_plan(parse_query(TCR5), params=params).spec
        snap = ds.store.open_snapshot()
        assert spec.semantics == ALL_UP_TO_L
        eng = PathEngine(snap)
        sjd = path_ids(eng.paths_up_to(spec))
        # edges are single-valued documents here, so the bound holds in plain document counts
        docs_bound = min(sum(snap.doc_count(p.index) for p in spec.positions(l)[0]) for l in spec.lengths())
        assert eng.counters.peak_live_tuples <= docs_bound
        base = sorted(tuple(p.steps) for l in spec.lengths() for p in inner_join_chain_baseline(snap, spec, l))
        oracle = sorted(p for l in spec.lengths() for p in paths_of_length(snap, spec, l))
        assert sjd == base == oracle and sjd


def test_tcr3_matches_oracle():
    ds = gen_finbench_mini()
    snap = ds.store.open_snapshot()
    found = 0
    for params in ds.params:
        spec = lower_to_plan(parse_query(TCR3), params=params).spec
        assert spec.semantics == ALL_SHORTEST
        res = PathEngine(snap).all_shortest_paths(spec)
        length, expect = shortest_paths_oracle(snap, spec)
        assert res.length == length and path_ids(res.paths) == expect
        found += bool(expect)
    assert found


# -- properties

@given(st.integers(0, 10_000), st.integers(5, 80), st.integers(1, 4), st.integers(1, 6))
def test_all_shortest_matches_oracle(seed, n, branching, max_repeat):
    rng = random.Random(seed)
    s = graph_store(n, random_graph(rng, n, branching), shards=rng.randint(1, 3))
    snap = s.open_snapshot()
    spec = endpoint_spec(rng.randrange(n), rng.randrange(n), max_repeat)
    res = PathEngine(snap, ClusterTopology.with_nodes(rng.randint(1, 3))).all_shortest_paths(spec)
    length, expect = shortest_paths_oracle(snap, spec)
    assert res.length == length
    assert path_ids(res.paths) == expect


@given(st.integers(0, 10_000))
def test_layers_sound_and_complete(seed):
    rng = random.Random(seed)
    n = rng.randint(5, 40)
    s = graph_store(n, random_graph(rng, n, 3))
    snap = s.open_snapshot()
    spec = endpoint_spec(None if rng.random() < 0.3 else rng.randrange(n), rng.randrange(n), 4)
    for length in spec.lengths():
        layers = PathEngine(snap).compute_layer_sets(spec, length)
        assert [set(r) for r in layers.layers] == layer_oracle(snap, spec, length)
        assert all(len(r) <= snap.doc_count(GRAPH) for r in layers.layers)


def test_paths_emitted_in_docid_order():
    rng = random.Random(8)
    n = 30
    s = graph_store(n, random_graph(rng, n, 4), shards=3)
    snap = s.open_snapshot()
    spec = endpoint_spec(None, None, 3, ALL_UP_TO_L)
    got = [p.ids for p in PathEngine(snap).paths_up_to(spec)]
    by_length = {}
    for p in got:
        by_length.setdefault(len(p), []).append(p)
    assert all(v == sorted(v) for v in by_length.values())
    assert sorted(len(p) for p in got) == [len(p) for p in got]


def test_reuse_counters():
    rng = random.Random(21)
    for _ in range(10):
        s, spec = reuse_instance(rng)
        snap = s.open_snapshot()
        res = PathEngine(snap).all_shortest_paths(spec)
        l_star = res.length
        assert res.counters.semi_joins_executed <= 3 * (l_star - 1) + 3, res.counters.per_length
        warm = PathEngine(snap)
        warm.compute_layer_sets(spec, l_star)
        assert warm.counters.semi_joins_executed <= 2 * l_star


def test_peak_live_tuples_linear():
    rng = random.Random(4)
    for _ in range(10):
        n = rng.randint(20, 200)
        s = graph_store(n, random_graph(rng, n, 6))
        spec = endpoint_spec(None, None, 4)
        eng = PathEngine(s.open_snapshot())
        res = eng.all_shortest_paths(spec)
        if res.length is not None:
            assert eng.counters.peak_live_tuples <= eng.live_tuple_bound(spec, res.length)


def test_first_path_streams_without_backtracking():
    b, l = 6, 5
    n, edges, src, dst = layered_graph(b, l)
    s = graph_store(n, edges)
    snap = s.open_snapshot()
    eng = PathEngine(snap)
    res = eng.all_shortest_paths(endpoint_spec(src, dst, l))
    before = eng.counters.table_lookups
    first = next(res.paths)
    # one lookup per out-value of each node on the emitted path, none for abandoned branches
    expected = sum(len(snap.values(GRAPH, d, "out")) for d in first.ids[:-1])
    assert eng.counters.table_lookups - before == expected
    assert eng.counters.paths_emitted == 1


def test_cache_shared_across_engines():
    rng = random.Random(2)
    s, spec = reuse_instance(rng)
    cache = SemanticCache.for_store(s)
    a = PathEngine(s.open_snapshot(), cache=cache)
    first = path_ids(a.all_shortest_paths(spec).paths)
    b = PathEngine(s.open_snapshot(), cache=cache)
    assert path_ids(b.all_shortest_paths(spec).paths) == first
    assert b.counters.semi_joins_executed == 0 and b.counters.cache_hits > 0


def test_middle_pivot_same_paths():
    rng = random.Random(6)
    for _ in range(10):
        s, spec = reuse_instance(rng)
        snap = s.open_snapshot()
        last = path_ids(PathEngine(snap).all_shortest_paths(spec).paths)
        mid = path_ids(PathEngine(snap, pivot="middle").all_shortest_paths(spec).paths)
        assert last == mid
    with pytest.raises(PathQueryError):
        PathEngine(s.open_snapshot(), pivot="first")


def test_layer_sets_accessors():
    s = graph_store(3, [(0, 1), (1, 2)])
    layers = PathEngine(s.open_snapshot()).compute_layer_sets(endpoint_spec(0, 2, 2), 2)
    assert isinstance(layers, LayerSets) and layers.total == 3 and len(layers[1]) == 1
    rec = next(PathEngine(s.open_snapshot()).materialize_paths(layers)).to_record(s.open_snapshot(), ["id"])
    assert [r["fields"]["id"] for r in rec] == [0, 1, 2]
