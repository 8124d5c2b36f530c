import pytest
from hypothesis import given

from conftest import chain, small_models
from pbisim.bench import GenSpec, generate
from pbisim.model import SparseModel
from pbisim.ordering import minimize
from pbisim.partition import Partition, partitions_equal
from pbisim.quotient import (MixedGoalBlock, UnstablePartition, build_quotient, check_stability,
                             coarsest_merge_breaks, lift, oracle_bisimulation)
from pbisim.refine import initial_partition_two_block


def _identity(m):
    return Partition(m.num_states, list(range(m.num_states)))


def test_identity_quotient_is_isomorphic():
    m = generate(GenSpec("random_mdp", 30, seed=4))
    q = build_quotient(m, _identity(m))
    assert q.model.structurally_equal(m)
    assert q.block_map == list(range(30))


def test_dedup_of_identical_lifted_actions():
    m = SparseModel.from_choices([[[(2, 1.0)]], [[(3, 1.0)]], [[(2, 1.0)]], [[(3, 1.0)]]],
                                 goal=[2, 3])
    p = Partition(4, [0, 0, 1, 1])
    q = build_quotient(m, p)
    assert q.model.num_states == 2
    assert len(q.model.actions(0)) == 1
    # a state whose two actions lift to the same distribution keeps one
    m = SparseModel.from_choices([[[(1, 1.0)], [(2, 1.0)]], [[(1, 1.0)]], [[(2, 1.0)]]],
                                 goal=[1, 2])
    q = build_quotient(m, Partition(3, [0, 1, 1]))
    assert q.model.choices() == [[[(1, 1.0)]], [[(1, 1.0)]]]


def test_mixed_goal_block():
    m = chain(3)
    with pytest.raises(MixedGoalBlock):
        build_quotient(m, Partition(3, [0, 0, 0]))


def test_unstable_partition_rejected():
    m = chain(4)
    with pytest.raises(UnstablePartition):
        build_quotient(m, initial_partition_two_block(m))


def test_chain_two_block_witness():
    m = chain(4)
    w = check_stability(m, initial_partition_two_block(m))
    assert w is not None
    assert sorted(initial_partition_two_block(m).members(w.block)) == [0, 1, 2]
    assert initial_partition_two_block(m).members(w.splitter) == [3]


def test_singletons_always_stable():
    m = generate(GenSpec("random_mdp", 40, actions=(1, 3), seed=9))
    assert check_stability(m, _identity(m)) is None


def test_oracle_examples():
    m = SparseModel.from_choices([[[(1, 1.0)]], [[(2, 1.0)]], [[(0, 1.0)]]], goal=[])
    assert oracle_bisimulation(m, initial_partition_two_block(m)).num_blocks == 1
    p = oracle_bisimulation(chain(4), initial_partition_two_block(chain(4)))
    assert p.num_blocks == 4


def test_partitions_equal():
    p = Partition(4, [0, 0, 1, 2])
    assert partitions_equal(p, p)
    assert partitions_equal(p, Partition(4, [7, 7, 3, 1]))
    assert not partitions_equal(p, Partition(4, [0, 3, 1, 2]))


def test_quotient_initial_and_goal():
    m = generate(GenSpec("layered_dag", 200, seed=1, duplication=4))
    p, _ = minimize(m, "size_heap")
    q = build_quotient(m, p)
    assert q.model.initial == q.block_map[m.initial]
    for s in range(m.num_states):
        assert m.is_goal(s) == q.model.is_goal(q.block_map[s])
    assert all(q.block_map[r] == b for b, r in enumerate(q.representative))
    assert q.block_map_text().splitlines()[0] == f"0 {q.block_map[0]}"


def test_lift_sums_per_block():
    m = SparseModel.from_choices([[[(1, 0.25), (2, 0.75)]], [[(1, 1.0)]], [[(2, 1.0)]]])
    assert lift(m, 0, [0, 1, 1]) == ((1, 1.0),)
    assert lift(m, 0, [0, 2, 1]) == ((1, 0.75), (2, 0.25))


@given(small_models(max_states=6))
def test_oracle_is_coarsest_stable_refinement(m):
    init = initial_partition_two_block(m)
    o = oracle_bisimulation(m, init)
    assert check_stability(m, o) is None
    assert all(len({init.block_of[s] for s in blk}) == 1 for blk in o.blocks())
    assert coarsest_merge_breaks(m, o)


@given(small_models())
def test_quotient_preserves_lifted_actions(m):
    p, _ = minimize(m, "size_hybrid")
    q = build_quotient(m, p)
    assert q.model.num_states == p.num_blocks
    for s in range(m.num_states):
        qs = q.block_map[s]
        mine = {lift(m, a, q.block_map) for a in m.actions(s)}
        theirs = {tuple(q.model.distribution(a)) for a in q.model.actions(qs)}
        assert mine == theirs


@given(small_models())
def test_quotient_idempotent(m):
    p, _ = minimize(m, "size_heap")
    q = build_quotient(m, p).model
    p2, _ = minimize(q, "random")
    assert p2.num_blocks == q.num_states
