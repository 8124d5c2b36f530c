import math

import pytest
from hypothesis import given

from conftest import chain, small_models
from pbisim.bench import GenSpec, generate
from pbisim.model import SparseModel
from pbisim.ordering import (STRATEGIES, CyclicModel, RefineConfig, SplitterSchedule, find_cycle,
                             hybrid_thresholds, minimize, run_refinement, topological_acyclic,
                             topological_cyclic_heuristic)
from pbisim.partition import Partition, partitions_equal
from pbisim.quotient import check_stability, oracle_bisimulation
from pbisim.refine import initial_partition_bfs_layers, initial_partition_two_block

CYCLIC_OK = [s for s in STRATEGIES if s != "topological"]


def _one_step_model():
    # every non-goal state jumps into G with probability 1
    return SparseModel.from_choices(
        [[[(3, 0.5), (4, 0.5)]], [[(3, 1.0)]], [[(4, 1.0)], [(3, 1.0)]],
         [[(3, 1.0)]], [[(4, 1.0)]]], goal=[3, 4])


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_one_step_model_keeps_initial_partition(strategy):
    m = _one_step_model()
    p, stats = minimize(m, strategy)
    assert partitions_equal(p, initial_partition_two_block(m)) or strategy == "topological_cyclic"
    assert partitions_equal(p, oracle_bisimulation(m, initial_partition_two_block(m)))
    if strategy != "random":  # smallest block or goal layer comes first
        assert sorted(p.members(stats.splitters[0][0])) == [3, 4]


def test_one_step_model_topological_uses_only_goal():
    m = _one_step_model()
    _, stats = minimize(m, "topological")
    assert stats.splitters[0][1] == 2
    assert stats.refine_calls == 2  # G, then S \ G once all its transitions are marked
    assert stats.spl_avg == 1.0


@pytest.mark.parametrize("strategy", STRATEGIES)
@pytest.mark.parametrize("backend", ["sort", "hash"])
def test_chain_splits_into_singletons(strategy, backend):
    p, stats = minimize(chain(4), strategy, backend)
    assert p.as_sets() == {frozenset({i}) for i in range(4)}
    assert stats.fallback_count == 0


def test_topological_chain_bound():
    p, stats = minimize(chain(3), "topological")
    assert [sorted(p.members(c)) for c, _ in stats.splitters][:1] == [[2]]
    assert stats.spl_avg <= 1.0


def test_topological_rejects_cycles():
    m = SparseModel.from_choices([[[(0, 0.5), (1, 0.5)]], [[(1, 1.0)]]], goal=[1])
    with pytest.raises(CyclicModel, match="topo-cyclic"):
        topological_acyclic(m, initial_partition_two_block(m))


def test_find_cycle_ignores_absorbing_loops_only():
    assert find_cycle(chain(5)) is None
    m = SparseModel.from_choices([[[(1, 1.0)]], [[(0, 0.5), (2, 0.5)]], [[(2, 1.0)]]], goal=[2])
    assert sorted(find_cycle(m)) == [0, 1]
    # a goal state with an outgoing edge still counts
    m = SparseModel.from_choices([[[(1, 1.0)]], [[(0, 1.0)]]], goal=[1])
    assert find_cycle(m) is not None


def test_cyclic_heuristic_mutual_loop():
    # 0 <-> 1, each also reaching G with 0.5
    m = SparseModel.from_choices([[[(1, 0.5), (2, 0.5)]], [[(0, 0.5), (2, 0.5)]], [[(2, 1.0)]]],
                                 goal=[2])
    p, _ = topological_cyclic_heuristic(m, initial_partition_bfs_layers(m))
    assert p.block_of[0] == p.block_of[1]


def test_cyclic_heuristic_scc_of_bisimilar_states():
    # ring 0 -> 1 -> 2 -> 0, each leaks 0.1 to G
    ring = [[[((s + 1) % 3, 0.9), (3, 0.1)]] for s in range(3)]
    m = SparseModel.from_choices(ring + [[[(3, 1.0)]]], goal=[3])
    p, _ = topological_cyclic_heuristic(m, initial_partition_bfs_layers(m))
    assert p.num_blocks == 2
    assert partitions_equal(p, oracle_bisimulation(m, initial_partition_two_block(m)))


@pytest.mark.parametrize("seed", range(5))
def test_cyclic_heuristic_matches_topological_on_dags(seed):
    m = generate(GenSpec("layered_dag", 300, seed=seed))
    a, _ = minimize(m, "topological")
    b, _ = minimize(m, "topological_cyclic")
    assert partitions_equal(a, b)


# ---------------------------------------------------------------- schedules


def _fresh(n):
    return Partition(n, list(range(n)))


def test_size_heap_order():
    p = _fresh(3)
    s = SplitterSchedule("size_heap", 100)
    for b, size in [(0, 5), (1, 2), (2, 9)]:
        s.push(b, 0, size)
    assert [s.pop(p).block for _ in range(3)] == [1, 0, 2]
    assert s.pop(p) is None


def test_stale_reference_skipped():
    p = Partition(4, [0, 0, 1, 1])
    s = SplitterSchedule("size_heap", 4)
    s.push(0, p.generation[0], 2)
    p.split(0, [[1]])
    assert s.pop(p) is None
    assert s.stale_skips == 1


def test_hybrid_routing():
    assert hybrid_thresholds(1024, 8) == (10, 80)
    s = SplitterSchedule("size_hybrid", 1024, hybrid_c=8)
    s.push(0, 0, 10)
    s.push(1, 0, 50)
    s.push(2, 0, 100)
    assert list(s.fifo) and list(s.fifo)[0].block == 0
    assert list(s.fifo2)[0].block == 1
    assert s.heap[0][2].block == 2
    p = _fresh(3)
    assert [s.pop(p).block for _ in range(3)] == [0, 1, 2]


def test_random_schedule_is_seeded():
    def order(seed):
        s = SplitterSchedule("random", 10, seed=seed)
        for b in range(10):
            s.push(b, 0, 1)
        p = _fresh(10)
        return [s.pop(p).block for _ in range(10)]
    assert order(3) == order(3)
    assert sorted(order(3)) == list(range(10))


def test_unknown_schedule():
    with pytest.raises(ValueError):
        SplitterSchedule("lifo", 4)
    with pytest.raises(ValueError):
        run_refinement(chain(3), initial_partition_two_block(chain(3)), "bogus")


# ---------------------------------------------------------------- properties


@given(small_models())
def test_every_strategy_reaches_oracle(m):
    oracle = oracle_bisimulation(m, initial_partition_two_block(m))
    strategies = CYCLIC_OK + (["topological"] if find_cycle(m) is None else [])
    for strategy in strategies:
        for backend in ("sort", "hash"):
            p, stats = minimize(m, strategy, backend, config=RefineConfig(audit=True))
            assert partitions_equal(p, oracle), (strategy, backend)
            assert check_stability(m, p) is None
            assert stats.stale_skips <= stats.enqueues
            assert stats.spl_avg <= math.log2(max(m.num_states, 2)) + 1 + stats.fallback_count


@given(small_models())
def test_enqueue_all_children_same_result(m):
    a, _ = minimize(m, "size_heap")
    b, _ = minimize(m, "size_heap", config=RefineConfig(enqueue_all_children=True))
    assert partitions_equal(a, b)


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_determinism(strategy):
    m = generate(GenSpec("layered_dag", 500, seed=11))
    cfg = RefineConfig(seed=5)
    p1, s1 = minimize(m, strategy, config=cfg)
    p2, s2 = minimize(m, strategy, config=cfg)
    assert p1.block_of == p2.block_of
    assert s1.splitters == s2.splitters
    for k in ("refine_calls", "splitter_mass", "stale_skips", "fallback_count", "enqueues"):
        assert getattr(s1, k) == getattr(s2, k)


def test_topological_uses_each_block_once():
    for seed in range(10):
        m = generate(GenSpec("layered_dag", 400, seed=seed))
        p, stats = minimize(m, "topological")
        assert stats.spl_avg <= 1.0 + 1e-12
        assert stats.fallback_count == 0
        used = [c for c, _ in stats.splitters]
        assert len(used) == len(set(used))


def test_act_hash_variant_same_partition():
    m = generate(GenSpec("random_mdp", 60, actions=(1, 3), seed=2))
    a, _ = minimize(m, "size_heap", "hash")
    b, _ = minimize(m, "size_heap", "hash", config=RefineConfig(act_hash=True))
    c, _ = minimize(m, "size_heap", "hash", config=RefineConfig(table_size=1))
    assert partitions_equal(a, b) and partitions_equal(a, c)
