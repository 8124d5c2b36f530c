"""Stability auditing, the brute-force bisimulation oracle, and quotient models."""

from __future__ import annotations

from dataclasses import dataclass
from math import fsum
from typing import NamedTuple, Sequence

from .model import SparseModel
from .partition import Partition


class Witness(NamedTuple):
    """States ``s`` and ``t`` of ``block`` disagree on their mass into ``splitter``."""

    block: int
    splitter: int
    s: int
    t: int


class UnstablePartition(Exception):
    def __init__(self, witness: Witness):
        self.witness = witness
        super().__init__(
            f"block {witness.block} is not stable w.r.t. block {witness.splitter} "
            f"(states {witness.s} and {witness.t})")


class MixedGoalBlock(Exception):
    pass


def lift(model: SparseModel, action: int, block_of: Sequence[int]) -> tuple:
    """Distribution of ``action`` over blocks as a sorted ``((block, mass), ...)``."""
    to, tg, pr = model.trans_offsets, model.targets, model.probs
    lo, hi = to[action], to[action + 1]
    if hi - lo == 1:
        return ((block_of[tg[lo]], pr[lo]),)
    acc: dict[int, list[float]] = {}
    for i in range(lo, hi):
        acc.setdefault(block_of[tg[i]], []).append(pr[i])
    return tuple(sorted((b, v[0] if len(v) == 1 else fsum(v)) for b, v in acc.items()))


def state_signature(model: SparseModel, s: int, block_of: Sequence[int]) -> frozenset:
    """Set of lifted distributions of all actions of ``s``."""
    ao = model.action_offsets
    return frozenset(lift(model, a, block_of) for a in range(ao[s], ao[s + 1]))


def unstable_blocks(model: SparseModel, partition: Partition) -> dict[int, list[list[int]]]:
    """Blocks whose members do not share one signature, grouped by signature."""
    block_of = partition.block_of
    out = {}
    for b in range(partition.num_blocks):
        members = partition.members(b)
        if len(members) < 2:
            continue
        first = state_signature(model, members[0], block_of)
        groups = None
        for i in range(1, len(members)):
            sig = state_signature(model, members[i], block_of)
            if sig != first:
                groups = {}
                for s in members:
                    groups.setdefault(state_signature(model, s, block_of), []).append(s)
                break
        if groups is not None:
            out[b] = list(groups.values())
    return out


def _witness_splitter(sig_s: frozenset, sig_t: frozenset) -> int:
    """Lowest block on which an unmatched lifted distribution of s or t differs."""
    diff = (sig_s - sig_t) or (sig_t - sig_s)
    mu = dict(min(diff))
    others = (sig_t if diff <= sig_s else sig_s) or {()}
    nu = dict(min(others))
    return min(b for b in mu.keys() | nu.keys() if mu.get(b) != nu.get(b))


def check_stability(model: SparseModel, partition: Partition) -> Witness | None:
    """None if the partition is a probabilistic bisimulation, else a witness."""
    block_of = partition.block_of
    for b in range(partition.num_blocks):
        members = partition.members(b)
        if len(members) < 2:
            continue
        s = min(members)
        sig_s = state_signature(model, s, block_of)
        for t in sorted(members):
            sig_t = state_signature(model, t, block_of)
            if sig_t != sig_s:
                return Witness(b, _witness_splitter(sig_s, sig_t), s, t)
    return None


def oracle_bisimulation(model: SparseModel, initial: Partition) -> Partition:
    """Coarsest bisimulation refining ``initial``, by naive fixpoint iteration.

    Every round recomputes all signatures against the current partition and
    regroups.  Quadratic or worse; meant for small models only.
    """
    labels = initial.canonical_labels()
    n = model.num_states
    while True:
        keys = [(labels[s], state_signature(model, s, labels)) for s in range(n)]
        relabel: dict = {}
        new = [relabel.setdefault(k, len(relabel)) for k in keys]
        if len(relabel) == len(set(labels)):
            return Partition(n, new)
        labels = new


def coarsest_merge_breaks(model: SparseModel, partition: Partition) -> bool:
    """True iff merging any two blocks of a stable partition breaks stability.

    Blocks mixing goal and non-goal states are never formed.
    """
    k = partition.num_blocks
    goal_block = [bool(model.goal_mask[partition.members(b)[0]]) for b in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            if goal_block[i] != goal_block[j]:
                continue
            merged = [i if b == j else b for b in partition.block_of]
            if check_stability(model, Partition(model.num_states, merged)) is None:
                return False
    return True


@dataclass
class QuotientModel:
    model: SparseModel
    block_map: list[int]          # original state -> quotient state
    representative: list[int]     # quotient state -> lowest original member

    def block_map_text(self) -> str:
        return "".join(f"{s} {q}\n" for s, q in enumerate(self.block_map))


def build_quotient(model: SparseModel, partition: Partition,
                   check: bool = True) -> QuotientModel:
    """Collapse every block to one state.

    Quotient states are numbered by the lowest original member of their block,
    so the result does not depend on internal block ids.  Lifted distributions
    of the representative are deduplicated in order of first occurrence.
    """
    for b in range(partition.num_blocks):
        flags = {model.goal_mask[s] for s in partition.members(b)}
        if len(flags) > 1:
            raise MixedGoalBlock(f"block {b} mixes goal and non-goal states")
    if check:
        w = check_stability(model, partition)
        if w is not None:
            raise UnstablePartition(w)
    block_map = partition.canonical_labels()
    k = max(block_map) + 1
    representative = [-1] * k
    for s, q in enumerate(block_map):
        if representative[q] < 0:
            representative[q] = s
    choices = []
    for q in range(k):
        r = representative[q]
        seen: dict[tuple, None] = {}
        for a in model.actions(r):
            seen.setdefault(lift(model, a, block_map))
        # inputs may sum to 1 + 1e-9; keep every lifted mass a valid probability
        choices.append([[(b, min(v, 1.0)) for b, v in d] for d in seen])
    goal = [q for q in range(k) if model.goal_mask[representative[q]]]
    qm = SparseModel.from_choices(choices, goal=goal, initial=block_map[model.initial],
                                  kind=model.kind)
    return QuotientModel(qm, block_map, representative)
