import pytest
from hypothesis import given, settings, strategies as st

from radiobc.engine import EngineConfig
from radiobc.gather import GatherError, GatherPlan, Copy, conflict_violations, gathering_algorithm, make_plan, max_delay, trajectory_violations
from radiobc.graph import bfs_tree, clog2, generate_graph

CFG = EngineConfig(seed=0)


def single_copy_plan(g, copies, root=0):
    parent = dict(bfs_tree(g, root))
    parent[root] = None
    from radiobc.gather import check_tree
    depth = check_tree(g, root, parent)
    cps = [Copy(i, m, u, t, depth[u]) for i, (m, u, t) in enumerate(copies)]
    return GatherPlan(root, parent, depth, 1, len({m for m, *_ in copies}), cps)


def test_leaf_copy_arrives_at_3t_plus_depth():
    g = generate_graph("path", n=3)
    plan = single_copy_plan(g, [(0, 2, 1)])
    res = gathering_algorithm(g, plan, CFG)
    assert res.received == {0: 5}
    assert res.arrivals == {0: 5} and plan.copies[0].dist == 5
    assert trajectory_violations(plan, res) == []


def test_far_apart_copies_both_arrive():
    g = generate_graph("star", n=4)
    plan = single_copy_plan(g, [(0, 1, 1), (1, 2, 2)])
    res = gathering_algorithm(g, plan, CFG)
    assert res.received == {0: 4, 1: 7}


def test_same_round_siblings_collide():
    g = generate_graph("star", n=4)
    plan = single_copy_plan(g, [(0, 1, 1), (1, 2, 1)])
    res = gathering_algorithm(g, plan, CFG)
    assert res.received == {}
    assert conflict_violations(g, plan, res.trace()) == []


def test_node_with_two_due_packets_suppresses():
    g = generate_graph("path", n=5)
    # the copy from node 4 (delay 1) is due again at node 1 in round 7,
    # the same round node 1's own copy with delay 2 is due
    plan = single_copy_plan(g, [(0, 4, 1), (1, 1, 2)])
    res = gathering_algorithm(g, plan, CFG)
    assert res.suppressed == [(1, 7)]
    assert res.received == {}


def test_transmitting_parent_misses_child():
    g = generate_graph("path", n=3)
    plan = single_copy_plan(g, [(0, 2, 1), (1, 1, 1)])
    res = gathering_algorithm(g, plan, CFG)
    assert res.received == {1: 4}
    assert res.suppressed == []


def test_root_origin_received_immediately():
    g = generate_graph("path", n=4)
    plan = make_plan(g, [0, 3], seed=1)
    res = gathering_algorithm(g, plan, CFG)
    assert res.received[0] == 0 and res.all_received(2)


def test_plan_copy_count_and_distinct_delays():
    g = generate_graph("gnp_connected", n=64, p=0.1, seed=2)
    plan = make_plan(g, list(range(1, 9)), c=2, seed=3)
    L = clog2(64)
    assert len(plan.copies) == 8 * 3 * L
    for m in range(8):
        ds = [cp.delay for cp in plan.copies if cp.message == m]
        assert len(ds) == len(set(ds)) == 3 * L
        assert all(1 <= d <= max_delay(8, 64, 2) for d in ds)
    assert plan.round_cap() == max(plan.depth.values()) + 30 * 3 * 8 * L


def test_plan_is_deterministic():
    g = generate_graph("gnp_connected", n=30, p=0.15, seed=1)
    a = make_plan(g, [3, 4, 5], seed=7)
    b = make_plan(g, [3, 4, 5], seed=7)
    assert a.copies == b.copies
    assert make_plan(g, [3, 4, 5], seed=8).copies != a.copies


def test_plan_errors():
    g = generate_graph("path", n=3)
    with pytest.raises(GatherError):
        make_plan(g, [1] * 10)
    with pytest.raises(GatherError):
        make_plan(g, [])
    with pytest.raises(GatherError):
        make_plan(g, [5])
    with pytest.raises(GatherError):
        make_plan(g, [1], root=9)
    with pytest.raises(GatherError):
        make_plan(g, [1], c=-1)
    with pytest.raises(GatherError):
        make_plan(g, [1], parent={0: None, 1: 0, 2: 0})
    with pytest.raises(GatherError):
        make_plan(g, [1], parent={0: None, 1: 0})


def test_custom_bfs_tree_accepted():
    g = generate_graph("cycle", n=4)
    plan = make_plan(g, [2], parent={0: None, 1: 0, 3: 0, 2: 3})
    res = gathering_algorithm(g, plan, CFG)
    assert res.all_received(1)
    assert trajectory_violations(plan, res) == []


def test_gnp_k16_all_arrive_in_cap():
    ok = 0
    for seed in range(20):
        g = generate_graph("gnp_connected", n=128, p=0.05, seed=seed)
        origins = [(seed * 31 + 17 * i) % 127 + 1 for i in range(16)]
        plan = make_plan(g, origins, seed=seed)
        res = gathering_algorithm(g, plan, EngineConfig(seed=seed))
        assert res.last_round <= plan.round_cap()
        assert trajectory_violations(plan, res) == []
        assert conflict_violations(g, plan, res.trace()) == []
        ok += res.all_received(16)
    assert ok >= 19


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 40), st.integers(0, 10**6), st.integers(1, 6))
def test_arrivals_follow_trajectories(n, seed, k):
    g = generate_graph("gnp_connected", n=n, p=min(1.0, 4 / n), seed=seed)
    origins = [(seed + 7 * i) % n for i in range(k)]
    plan = make_plan(g, origins, seed=seed)
    res = gathering_algorithm(g, plan, EngineConfig(seed=seed))
    assert trajectory_violations(plan, res) == []
    assert conflict_violations(g, plan, res.trace()) == []
    for m, r in res.received.items():
        if origins[m] == plan.root:
            assert r == 0
        else:
            assert r == min(res.arrivals[cp.ident] for cp in plan.copies
                            if cp.message == m and cp.ident in res.arrivals)
