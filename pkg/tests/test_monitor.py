import random
import threading
from types import SimpleNamespace

import pytest
from hypothesis import given, settings, strategies as st

from hotstuff_liveness.campaign import failure_free
from hotstuff_liveness.chain import GENESIS, BlockStore, ProcessId, ProtocolConfig, make_child
from hotstuff_liveness.monitor import (
    Method, PartialProcessState, PartialSystemState, StateTransitionGraph, TemperatureState, Verdict,
    VerdictKind, check_safety, check_temperature, classify_false_positive, find_hot_lassos,
    hot_cycle_components, is_hot, temperature_scan, time_bound_check, update_graph,
)
from hotstuff_liveness.scenarios import GeneratorConfig, canonical_partition, fixture_deadlock, generate, with_kind
from hotstuff_liveness.simnet import simulate
from builders import random_configuration, random_digraph, to_graph
from oracles import first_run_of_ones, has_hot_cycle, hot_by_definition

G = GENESIS.digest
P = [ProcessId(i) for i in range(4)]


def pss(locks, fresh=False):
    return PartialSystemState.of({P[i + 1]: PartialProcessState(l, l, G) for i, l in enumerate(locks)}, fresh)


@pytest.fixture
def fork():
    store = BlockStore()
    b1 = store.add(make_child(GENESIS, 1, b"b1")).digest
    b2 = store.add(make_child(GENESIS, 2, b"b2")).digest
    return store, b1, b2


# -- hashing ------------------------------------------------------------------

def test_hash_ignores_insertion_order_and_tracks_freshness():
    a = PartialProcessState(G, G, G)
    x = PartialSystemState.of({P[1]: a, P[2]: a})
    y = PartialSystemState.of({P[2]: a, P[1]: a})
    assert x.state_hash == y.state_hash and x == y
    assert PartialSystemState.of({P[1]: a, P[2]: a}, True).state_hash != x.state_hash


def test_hash_collision_audit_over_corpus():
    seen = {}
    for kind in ("2phase", "sync"):
        gcfg = GeneratorConfig.for_kind(kind, rounds=10)
        for seed in range(60):
            for s in simulate(generate(gcfg, seed)).states:
                key = (s.items, s.fresh_exec)
                assert seen.setdefault(s.state_hash, key) == key
    assert len(seen) > 100


# -- hot predicate ------------------------------------------------------------

def test_deadlocked_state_is_hot(fork):
    store, b1, b2 = fork
    cfg = ProtocolConfig(4, 1, "2phase")
    assert is_hot(pss([b2, b1, b2]), store, cfg)
    assert not is_hot(pss([b2, b1, b2], fresh=True), store, cfg)
    # crediting the twinned index lets b2 reach three votes
    assert not is_hot(pss([b2, b1, b2]), store, cfg, count_faulty=True)


def test_non_conflicting_locks_are_cold(fork):
    store, b1, _ = fork
    cfg = ProtocolConfig(4, 1, "2phase")
    assert not is_hot(pss([G, b1, b1]), store, cfg)


def test_genesis_lock_supports_both_sides(fork):
    store, b1, b2 = fork
    # genesis is itself a locked block and no lock conflicts with it: quorum reachable
    assert not is_hot(pss([b1, b2, G]), store, ProtocolConfig(4, 1, "2phase"))


@settings(max_examples=300)
@given(st.integers(0, 2**32), st.booleans())
def test_is_hot_matches_definition(seed, credit):
    s, store, cfg, parents = random_configuration(random.Random(seed))
    expected = hot_by_definition(s.locks(), s.fresh_exec, parents, cfg.quorum_size, credited=int(credit))
    assert is_hot(s, store, cfg, count_faulty=credit) == expected


@given(st.integers(0, 2**32))
def test_crediting_the_twin_only_removes_hot_states(seed):
    s, store, cfg, _ = random_configuration(random.Random(seed))
    if is_hot(s, store, cfg, count_faulty=True):
        assert is_hot(s, store, cfg)


# -- temperature --------------------------------------------------------------

@given(st.lists(st.booleans(), max_size=40), st.integers(1, 8))
def test_temperature_matches_run_scan(bits, tt):
    assert temperature_scan(bits, tt) == first_run_of_ones(bits, tt)


def test_temperature_resets_on_cold_state():
    t = TemperatureState(0, 2)
    t, v = check_temperature(None, ["a"], t, hot=True)
    assert t.temp == 1 and v is None
    t, v = check_temperature(None, ["a", "b"], t, hot=False)
    assert t.temp == 0
    t, _ = check_temperature(None, ["a", "b", "c"], t, hot=True)
    t, v = check_temperature(None, ["a", "b", "c", "d"], t, hot=True)
    assert v.method is Method.TEMPERATURE and v.round == 4 and v.trace == ["a", "b", "c", "d"]


def test_threshold_must_be_positive():
    with pytest.raises(ValueError):
        TemperatureState(0, 0)


# -- lasso --------------------------------------------------------------------

@settings(max_examples=200)
@given(st.integers(0, 2**32))
def test_lasso_matches_dfs_oracle(seed):
    vertices, edges, hot = random_digraph(random.Random(seed), 60)
    g = to_graph(vertices, edges, hot)
    found = find_hot_lassos(g)
    assert bool(found) == has_hot_cycle(vertices, edges, hot)
    for v in found:  # every witness is a genuine all-hot cycle
        w = v.witness
        assert all(g.hot_flags[x] for x in w)
        assert all(b in g.edges[a] for a, b in zip(w, w[1:] + w[:1]))


def test_lasso_examples():
    g = to_graph([0, 1, 2], {0: {1}, 1: {2}, 2: {0}}, {0: True, 1: True, 2: False})
    assert find_hot_lassos(g) == []
    g = to_graph([0, 1], {0: {1}}, {0: True, 1: True})
    assert find_hot_lassos(g) == []
    g = to_graph([0], {0: {0}}, {0: True})
    (v,) = find_hot_lassos(g)
    assert v.witness == ["0000"] and v.kind is VerdictKind.LIVENESS


def test_lasso_cap_per_component():
    n = 6  # complete digraph: many elementary cycles in one component
    edges = {v: {w for w in range(n) if w != v} for v in range(n)}
    g = to_graph(list(range(n)), edges, {v: True for v in range(n)})
    assert len(hot_cycle_components(g)) == 1
    assert len(find_hot_lassos(g, per_component=5)) == 5
    keys = [frozenset(v.witness) for v in find_hot_lassos(g, per_component=1000)]
    assert len(keys) == len(set(keys))


def test_lasso_verdict_needs_witness():
    with pytest.raises(ValueError):
        Verdict(VerdictKind.LIVENESS, Method.LASSO, [])


@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9)), max_size=40))
def test_graph_only_grows(pairs):
    g, sizes = StateTransitionGraph(), []
    for a, b in pairs:
        g.add_transition(str(a), a % 2 == 0, str(b), b % 2 == 0)
        sizes.append((len(g), g.edge_count))
    assert all(v1 <= v2 for (v1, _), (v2, _) in zip(sizes, sizes[1:]))
    assert all(e1 <= e2 for (_, e1), (_, e2) in zip(sizes, sizes[1:]))


def test_graph_rejects_inconsistent_hot_flag():
    g = StateTransitionGraph()
    g.add_state("x", True)
    with pytest.raises(ValueError):
        g.add_state("x", False)


def test_export_round_trip_and_order():
    vertices, edges, hot = random_digraph(random.Random(5), 40)
    g = to_graph(vertices, edges, hot)
    text = g.export()
    assert StateTransitionGraph.parse(text).export() == text
    lines = text.splitlines()
    assert lines == sorted(l for l in lines if l[0] == "v") + sorted(l for l in lines if l[0] == "e")


def test_concurrent_writers_build_the_same_graph():
    rng = random.Random(11)
    work = [[(str(rng.randrange(50)), str(rng.randrange(50))) for _ in range(400)] for _ in range(4)]
    def fill(g, chunk):
        g.merge((a, int(a) % 3 == 0, b, int(b) % 3 == 0) for a, b in chunk)
    serial = StateTransitionGraph()
    for chunk in work:
        fill(serial, chunk)
    shared = StateTransitionGraph()
    threads = [threading.Thread(target=fill, args=(shared, c)) for c in work]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert shared.export() == serial.export()


def test_update_graph_records_hotness(fork):
    store, b1, b2 = fork
    cfg = ProtocolConfig(4, 1, "2phase")
    g = StateTransitionGraph()
    s = pss([b2, b1, b2])
    update_graph(g, s, s, store, cfg)
    assert g.hot_flags[s.state_hash] and find_hot_lassos(g)


# -- execution-level checks ---------------------------------------------------

def test_time_bound_on_failure_free_run():
    ex = simulate(failure_free("hotstuff", 10, 0))
    assert time_bound_check(ex, 80) is None
    v = time_bound_check(ex, 79)
    assert v.method is Method.TIME_BOUND and v.round == 1
    with pytest.raises(ValueError):
        time_bound_check(ex, 0)


def test_time_bound_on_fully_partitioned_run():
    s = failure_free("2phase", 5, 0)
    singles = canonical_partition([{p} for p in s.instances()])
    s.partitions = {r: singles for r in s.partitions}
    ex = simulate(s)
    assert not ex.executed()
    assert time_bound_check(ex, ex.end_time - 1) is not None
    assert classify_false_positive(ex)  # all locks at genesis


def test_safety_check_on_sync_fork():
    # found by scanning the delay-injected Sync corpus
    s = generate(GeneratorConfig.for_kind("sync", rounds=10, delay_injection=True), 868)
    v = check_safety(simulate(s))
    assert v.kind is VerdictKind.SAFETY and v.round == 2 and "height 1" in v.detail


def test_no_safety_verdict_on_agreeing_run():
    assert check_safety(simulate(failure_free("hotstuff", 10, 0))) is None


def test_false_positive_classification(fork):
    ex = simulate(fixture_deadlock())
    assert classify_false_positive(ex) is False
    assert classify_false_positive(simulate(with_kind(fixture_deadlock(), "hotstuff"))) is True
    with pytest.raises(ValueError):
        classify_false_positive(ex, Verdict(VerdictKind.SAFETY, Method.AGREEMENT))


def test_ancestor_related_locks_are_a_false_positive(fork):
    store, b1, _ = fork
    snaps = {P[1]: PartialProcessState(b1, b1, G), P[2]: PartialProcessState(G, G, G)}
    ex = SimpleNamespace(store=store, correct=[P[1], P[2]], boundaries=[SimpleNamespace(snapshots=snaps)])
    assert classify_false_positive(ex)
