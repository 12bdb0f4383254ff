from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from radiobc.broadcast import (PipelineError, batch_size, decompose_rings, inter_ring_transfer, mmv_stage_length,
                               multi_message_known, multi_message_unknown, pipeline_budget, ring_setup_length,
                               ring_width, single_message_broadcast)
from radiobc.config import DEFAULT
from radiobc.engine import EngineConfig, Kind, replay_outcomes
from radiobc.graph import bfs_layering, clog2, generate_graph
from radiobc.gst import build_gst_oracle
from radiobc.primitives import CollisionDetectionRequired

CFG = EngineConfig(seed=1)
BIG = 10**10


def messages(k, salt=0):
    return [(0x9E3779B1 * (i + 1 + salt)) & 0xFFFFFFFF for i in range(k)]


def test_budget_and_width_formulas():
    assert pipeline_budget(10, 2, 64) == 64 * (10 + 12 + 6 ** 6)
    assert ring_width(63, 64) == 1
    assert ring_width(5000, 64) == 4
    assert ring_width(10, 64, DEFAULT.with_overrides("ring_width=3")) == 3
    assert batch_size(8, 127, 128) == 7
    assert batch_size(3, 127, 128) == 3
    assert batch_size(100, 5000, 16) == 79


def test_ring_decomposition():
    lv = {v: v for v in range(10)}
    rings = decompose_rings(lv, 3)
    assert rings.count == 4
    assert rings.rings == ((0, 1, 2), (3, 4, 5), (6, 7, 8), (9,))
    assert rings.inner(1) == [3] and rings.outer(1) == [5]
    assert rings.outer(3) == []
    with pytest.raises(PipelineError):
        decompose_rings(lv, 0)


@settings(max_examples=40)
@given(st.integers(5, 60), st.integers(0, 10**6), st.integers(1, 6))
def test_rings_partition_and_separate(n, seed, width):
    g = generate_graph("gnp_connected", n=n, p=min(1.0, 3 / n), seed=seed)
    lv = dict(enumerate(bfs_layering(g, 0).level))
    rings = decompose_rings(lv, width)
    assert sorted(v for r in rings.rings for v in r) == list(range(n))
    for u, v in g.edges():
        assert abs(rings.ring_of(u) - rings.ring_of(v)) <= 1


# -- single message ---------------------------------------------------------------------


def test_single_k2():
    g = generate_graph("path", n=2)
    r = single_message_broadcast(g, 0, 99, CFG)
    assert r.success and r.completion_round <= 100


def test_single_path64():
    g = generate_graph("path", n=64)
    r = single_message_broadcast(g, 0, 12345, CFG)
    assert r.success, r.failures
    assert r.completion_round <= r.rounds <= r.params["budget"]
    assert r.params["rings"] == 64
    assert replay_outcomes(r.trace(), g, True) == []


def test_single_carries_the_message():
    g = generate_graph("gnp_connected", n=40, p=0.1, seed=3)
    r = single_message_broadcast(g, 5, 777, CFG)
    assert r.success
    data = [p.body for txs in r.trace().transmissions().values() for p in txs.values() if p.kind is Kind.DATA]
    assert data and set(data) == {777}


def test_single_multiring_wide():
    g = generate_graph("path", n=24)
    c = DEFAULT.with_overrides("ring_width=4")
    r = single_message_broadcast(g, 0, 1, CFG, c, budget=BIG)
    assert r.success and r.params["rings"] == 6


def test_single_oracle_setup():
    g = generate_graph("gnp_connected", n=64, p=0.08, seed=2)
    r = single_message_broadcast(g, 0, 4, CFG, setup="oracle")
    assert r.success and r.stages["setup"] == 0


def test_requires_collision_detection():
    with pytest.raises(CollisionDetectionRequired):
        single_message_broadcast(generate_graph("path", n=4), 0, 1, EngineConfig(collision_detection=False))


def test_depth_below_eccentricity_rejected():
    with pytest.raises(PipelineError):
        single_message_broadcast(generate_graph("path", n=6), 0, 1, CFG, depth=3)
    with pytest.raises(PipelineError):
        single_message_broadcast(generate_graph("path", n=6), 9, 1, CFG)


def test_budget_exhaustion_is_reported_with_stage():
    g = generate_graph("path", n=12)
    r = single_message_broadcast(g, 0, 1, CFG, budget=5000)
    assert not r.success
    assert any(f.startswith("aborted") for f in r.failures)
    assert "broadcast" not in r.stages


def test_depth_bound_above_eccentricity_still_works():
    g = generate_graph("path", n=10)
    r = single_message_broadcast(g, 0, 3, CFG, depth=14)
    assert r.success and r.depth == 14


def test_setup_rounds_alternate_ring_parity():
    g = generate_graph("path", n=30)
    c = DEFAULT.with_overrides("ring_width=3")
    r = single_message_broadcast(g, 0, 1, CFG, c, budget=BIG)
    assert r.success
    lo = r.stages["wave"]
    hi = lo + r.stages["setup"]
    assert r.stages["setup"] == 2 * ring_setup_length(3, clog2(30), c)
    for rnd, txs in r.trace().transmissions().items():
        if lo < rnd <= hi:
            rings = {u // 3 for u in txs}
            assert len({j % 2 for j in rings}) == 1, (rnd, rings)
            assert all(j % 2 == (rnd - lo - 1) % 2 for j in rings)


def test_receptions_stay_within_adjacent_rings():
    g = generate_graph("path", n=30)
    c = DEFAULT.with_overrides("ring_width=3")
    r = multi_message_unknown(g, 0, messages(4), CFG, c, budget=BIG)
    assert r.success
    for _, v, pkt in r.trace().receptions():
        assert abs(v // 3 - pkt.src // 3) <= 1


# -- known topology ------------------------------------------------------------------------


def test_known_k1_on_k2():
    r = multi_message_known(generate_graph("path", n=2), 0, [42], CFG)
    assert r.success and r.completion_round == 1


def test_known_path32_k4():
    g = generate_graph("path", n=32)
    L = clog2(32)
    for seed in range(20):
        r = multi_message_known(g, 0, messages(4, seed), EngineConfig(seed=seed))
        assert r.success
        assert r.completion_round <= 8 * (31 + 4 * L + L * L)


def test_known_without_collision_detection():
    g = generate_graph("gnp_connected", n=40, p=0.1, seed=1)
    r = multi_message_known(g, 0, messages(5), EngineConfig(seed=2, collision_detection=False))
    assert r.success


def test_known_budget_exhaustion_lists_ranks():
    g = generate_graph("path", n=20)
    r = multi_message_known(g, 0, messages(6), CFG, budget=10)
    assert not r.success
    assert any(f.startswith("ranks ") for f in r.failures)


def test_known_rejects_bad_inputs():
    g = generate_graph("path", n=5)
    with pytest.raises(PipelineError):
        multi_message_known(g, 0, [], CFG)
    with pytest.raises(PipelineError):
        multi_message_known(g, 1, [1], CFG, labels=build_gst_oracle(g, 0))


def test_known_ablation_variants_still_run():
    g = generate_graph("gnp_connected", n=40, p=0.1, seed=1)
    for kw in ({"noise_policy": "silent"}, {"slow_index": "level"}):
        r = multi_message_known(g, 0, messages(3), CFG, **kw)
        assert r.params[next(iter(kw))] == next(iter(kw.values()))


# -- unknown topology ---------------------------------------------------------------------


def test_unknown_single_ring_degenerates():
    g = generate_graph("path", n=8)
    c = DEFAULT.with_overrides("ring_width=8")
    r = multi_message_unknown(g, 0, messages(3), CFG, c, budget=BIG)
    assert r.success
    assert r.params["rings"] == 1 and r.params["fec"] == 0
    assert r.plan == [(0, 0, 0)]


@pytest.mark.parametrize("mode", ["full", "generation"])
def test_unknown_multiring(mode):
    g = generate_graph("path", n=20)
    c = DEFAULT.with_overrides("ring_width=3")
    r = multi_message_unknown(g, 0, messages(9), CFG, c, mode=mode, budget=BIG)
    assert r.success, r.failures
    assert r.params["batches"] == 2 and r.params["rings"] == 7


def test_unknown_gnp_default():
    g = generate_graph("gnp_connected", n=64, p=0.08, seed=4)
    r = multi_message_unknown(g, 0, messages(8), CFG)
    assert r.success and r.rounds <= r.params["budget"]
    assert replay_outcomes(r.trace(), g, True) == []


def test_batch_plan_one_batch_per_ring_per_epoch():
    g = generate_graph("path", n=20)
    c = DEFAULT.with_overrides("ring_width=2")
    r = multi_message_unknown(g, 0, messages(12), CFG, c, budget=BIG)
    assert r.success
    s = r.params["spacing"]
    assert Counter((e, j) for e, j, _ in r.plan).most_common(1)[0][1] == 1
    for e, j, b in r.plan:
        assert e == j + s * b
    by_epoch = {}
    for e, j, _ in r.plan:
        by_epoch.setdefault(e, []).append(j)
    for rings in by_epoch.values():
        rings.sort()
        assert all(b - a >= s for a, b in zip(rings, rings[1:]))
    assert sorted({b for *_, b in r.plan}) == list(range(r.params["batches"]))


def test_unknown_rejects_bad_mode_and_empty():
    g = generate_graph("path", n=4)
    with pytest.raises(PipelineError):
        multi_message_unknown(g, 0, [1], CFG, mode="fountain")
    with pytest.raises(PipelineError):
        multi_message_unknown(g, 0, [], CFG)


def test_stage_lengths():
    assert mmv_stage_length(1, 1, 7) == 4 + 12 * 7 + 24 * 49


# -- boundary transfer -------------------------------------------------------------------------


def test_transfer_one_to_one():
    g = generate_graph("path", n=2)
    r = inter_ring_transfer(g, [0], [1], [5], CFG)
    assert r.all_decoded([1])


def test_transfer_one_sender_usually_first_phase():
    g = generate_graph("path", n=16)
    L = clog2(16)
    early = 0
    for seed in range(200):
        r = inter_ring_transfer(g, [0], [1], [5], EngineConfig(seed=seed))
        assert r.all_decoded([1])
        early += r.decoded[1] <= L
    assert early / 200 >= 0.5


def test_transfer_four_senders_batch_eight():
    g = generate_graph("star", n=5)
    ok = 0
    for seed in range(100):
        r = inter_ring_transfer(g, [1, 2, 3, 4], [0], messages(8, seed), EngineConfig(seed=seed))
        ok += r.all_decoded([0])
    assert ok >= 95


def test_transfer_zero_senders_rejected():
    g = generate_graph("path", n=3)
    with pytest.raises(PipelineError):
        inter_ring_transfer(g, [], [1], [5], CFG)
    with pytest.raises(PipelineError):
        inter_ring_transfer(g, [0], [1], [], CFG)
