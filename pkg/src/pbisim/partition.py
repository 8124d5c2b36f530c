"""Refinable partition over dense state indices.

Every block occupies a contiguous slice of ``state_order``; splitting a block
rearranges its slice in place and hands out fresh block ids for the new parts.
"""

from __future__ import annotations

from typing import Iterable, Sequence


class Partition:
    __slots__ = ("state_order", "position", "block_of", "start", "end",
                 "generation")

    def __init__(self, num_states: int, block_of: Sequence[int] | None = None):
        """Partition induced by a state -> block-label map (one block if omitted).

        Labels are renumbered densely in order of first appearance.
        """
        if block_of is None:
            block_of = [0] * num_states
        if len(block_of) != num_states:
            raise ValueError("block_of length differs from num_states")
        relabel: dict[int, int] = {}
        members: list[list[int]] = []
        for s, b in enumerate(block_of):
            i = relabel.get(b)
            if i is None:
                i = relabel[b] = len(members)
                members.append([])
            members[i].append(s)
        self._fill(num_states, members)

    def _fill(self, num_states: int, members: list[list[int]]):
        self.state_order = []
        self.position = [0] * num_states
        self.block_of = [0] * num_states
        self.start = []
        self.end = []
        self.generation = []
        for b, mem in enumerate(members):
            self.start.append(len(self.state_order))
            for s in mem:
                self.position[s] = len(self.state_order)
                self.block_of[s] = b
                self.state_order.append(s)
            self.end.append(len(self.state_order))
            self.generation.append(0)

    @classmethod
    def from_blocks(cls, num_states: int, blocks: Iterable[Iterable[int]]) -> "Partition":
        """Block ids follow the order of ``blocks``; empty blocks are dropped."""
        p = cls.__new__(cls)
        members = [sorted(b) for b in blocks]
        members = [m for m in members if m]
        if sum(len(m) for m in members) != num_states or \
                len({s for m in members for s in m}) != num_states:
            raise ValueError("blocks must cover every state exactly once")
        p._fill(num_states, members)
        return p

    def copy(self) -> "Partition":
        p = Partition.__new__(Partition)
        p.state_order = self.state_order[:]
        p.position = self.position[:]
        p.block_of = self.block_of[:]
        p.start = self.start[:]
        p.end = self.end[:]
        p.generation = self.generation[:]
        return p

    @property
    def num_states(self) -> int:
        return len(self.block_of)

    @property
    def num_blocks(self) -> int:
        return len(self.start)

    def size(self, b: int) -> int:
        return self.end[b] - self.start[b]

    def members(self, b: int) -> list[int]:
        return self.state_order[self.start[b]:self.end[b]]

    def blocks(self) -> list[list[int]]:
        return [sorted(self.members(b)) for b in range(self.num_blocks)]

    def as_sets(self) -> set[frozenset[int]]:
        return {frozenset(self.members(b)) for b in range(self.num_blocks)}

    def canonical_labels(self) -> list[int]:
        """Block labels renumbered by lowest member state (independent of ids)."""
        relabel: dict[int, int] = {}
        out = []
        for b in self.block_of:
            if b not in relabel:
                relabel[b] = len(relabel)
            out.append(relabel[b])
        return out

    def split(self, b: int, groups: list[list[int]]) -> list[int]:
        """Split block ``b`` into ``groups`` plus the residual of untouched states.

        ``groups`` are disjoint nonempty lists of members of ``b``.  The residual
        (members in no group) keeps id ``b`` if nonempty, otherwise the first
        group does.  Returns the ids of all parts in slice order, residual first.
        No-op (returns ``[b]``) when the split would leave ``b`` unchanged.
        """
        st, en = self.start[b], self.end[b]
        touched = sum(len(g) for g in groups)
        if touched == en - st and len(groups) <= 1:
            return [b]
        order, pos, block_of = self.state_order, self.position, self.block_of
        # move touched states to the tail of the slice
        q = en
        for g in groups:
            for s in g:
                q -= 1
                i = pos[s]
                x = order[q]
                order[q] = s
                pos[s] = q
                order[i] = x
                pos[x] = i
        tail = q
        i = tail
        for g in groups:
            for s in g:
                order[i] = s
                pos[s] = i
                i += 1
        self.generation[b] += 1
        ids = []
        cursor = tail
        if tail > st:
            self.end[b] = tail
            ids.append(b)
            rest = groups
        else:
            first = groups[0]
            self.end[b] = st + len(first)
            ids.append(b)
            cursor = st + len(first)
            rest = groups[1:]
        for g in rest:
            nb = len(self.start)
            self.start.append(cursor)
            cursor += len(g)
            self.end.append(cursor)
            self.generation.append(0)
            for s in g:
                block_of[s] = nb
            ids.append(nb)
        return ids

    def audit(self) -> None:
        """Raise AssertionError if the internal arrays are inconsistent."""
        n = self.num_states
        assert sorted(self.state_order) == list(range(n)), "state_order is not a permutation"
        covered = 0
        for b in range(self.num_blocks):
            st, en = self.start[b], self.end[b]
            assert en > st, f"block {b} is empty"
            covered += en - st
            for i in range(st, en):
                s = self.state_order[i]
                assert self.position[s] == i, f"position of {s} inconsistent"
                assert self.block_of[s] == b, f"block_of[{s}] != {b}"
        assert covered == n, "slices do not cover all states"

    def __repr__(self):
        return f"Partition({self.blocks()})"


def partitions_equal(p1: Partition, p2: Partition) -> bool:
    """True iff both partitions induce the same equivalence relation."""
    if p1.num_states != p2.num_states or p1.num_blocks != p2.num_blocks:
        return False
    return p1.canonical_labels() == p2.canonical_labels()


def is_finer(fine: Partition, coarse: Partition) -> bool:
    """Every block of ``fine`` lies inside one block of ``coarse``."""
    image: dict[int, int] = {}
    for s, b in enumerate(fine.block_of):
        c = coarse.block_of[s]
        if image.setdefault(b, c) != c:
            return False
    return True
