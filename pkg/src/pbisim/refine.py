"""Splitting blocks by the probability of reaching a splitter.

Two grouping backends are provided.  ``refine_sort`` orders the touched states
by their sorted value sets; ``refine_hash`` maps every exact probability to a
dense group id through :class:`ProbTable` and groups states by their id sets,
so no comparison sort over the probability values is needed.  Both produce the
same blocks, the same block ids and the same slice order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
import math
from math import fsum, log10

from .model import SparseModel
from .partition import Partition

DEFAULT_TABLE_SIZE = 10000
_TINY = 1e-300


def leading_zeros(v: float) -> int:
    """``floor(-log10(v))`` for ``v`` in (0, 1): the zeros after the decimal point.

    Exact powers of ten count one more (``0.01`` gives 2), so the pre-modulo
    hash of any ``v`` in (0, 1) lies in [1000, 10000].
    """
    return math.floor(-log10(v))


def hash_probability(v: float, table_size: int | None = DEFAULT_TABLE_SIZE,
                     num_actions: int | None = None) -> int:
    """Bucket of ``v``: its first four significant digits, modulo ``table_size``.

    ``h(v) = floor(10**(4+k) * v)`` with ``k`` the leading zeros after the
    point, and ``h(0) = 0``.  With ``num_actions`` given the alternative
    ``floor(num_actions * 10**k * v)`` is used instead.  ``table_size=None``
    returns the raw value.
    """
    if v <= _TINY:
        return 0
    k = 0 if v >= 1.0 else leading_zeros(v)
    if num_actions is None:
        raw = int(v * 10.0 ** (4 + k))
    else:
        raw = int(num_actions * 10.0 ** k * v)
    return raw if table_size is None else raw % table_size


class ProbTable:
    """Chained hash table from exact probabilities to dense group ids.

    A table is reused for every splitter of a run.  ``new_epoch`` invalidates
    all chains in O(1): a bucket whose stamp differs from the current epoch is
    treated as empty and rebuilt on first use.
    """

    def __init__(self, size: int = DEFAULT_TABLE_SIZE, num_actions: int | None = None):
        if size < 1:
            raise ValueError("table size must be positive")
        self.size = size
        self.num_actions = num_actions
        self.chains: list[list[tuple[float, int]] | None] = [None] * size
        self.stamps = [0] * size
        self.epoch = 1  # stamps start at 0, so every bucket begins empty
        self.next_id = 0
        self.collisions = 0

    def new_epoch(self) -> None:
        self.epoch += 1
        self.next_id = 0

    def group_id(self, v: float) -> int:
        h = hash_probability(v, self.size, self.num_actions)
        if self.stamps[h] != self.epoch:
            self.stamps[h] = self.epoch
            gid = self.next_id
            self.next_id += 1
            self.chains[h] = [(v, gid)]
            return gid
        chain = self.chains[h]
        for value, gid in chain:
            if value == v:
                return gid
        self.collisions += 1
        gid = self.next_id
        self.next_id += 1
        chain.append((v, gid))
        return gid


@dataclass
class RefineOutcome:
    splitter: int
    splitter_size: int
    # (parent, [(child, size), ...]) with the parent id among the children
    splits: list[tuple[int, list[tuple[int, int]]]] = field(default_factory=list)
    largest_child: dict[int, int] = field(default_factory=dict)
    transition_visits: int = 0
    touched_states: int = 0
    touched_blocks: list[int] = field(default_factory=list)

    @property
    def new_blocks(self) -> int:
        return sum(len(children) - 1 for _, children in self.splits)


# ---------------------------------------------------------------------------
# initial partitions


def initial_partition_two_block(model: SparseModel) -> Partition:
    """Goal states first, then the rest; empty parts omitted."""
    goal = [s for s in range(model.num_states) if model.goal_mask[s]]
    rest = [s for s in range(model.num_states) if not model.goal_mask[s]]
    return Partition.from_blocks(model.num_states, [goal, rest])


def bfs_depths(model: SparseModel) -> list[int]:
    """Shortest path length to a goal state, ignoring probabilities; -1 if none."""
    depth = [-1] * model.num_states
    queue = deque()
    for s in range(model.num_states):
        if model.goal_mask[s]:
            depth[s] = 0
            queue.append(s)
    ro, rs = model.rev_offsets, model.rev_states
    while queue:
        t = queue.popleft()
        d = depth[t] + 1
        for i in range(ro[t], ro[t + 1]):
            s = rs[i]
            if depth[s] < 0:
                depth[s] = d
                queue.append(s)
    return depth


def initial_partition_bfs_layers(model: SparseModel) -> Partition:
    """One block per reverse-BFS depth (block 0 = goal), unreachable states last."""
    depth = bfs_depths(model)
    layers: list[list[int]] = [[] for _ in range(max(depth, default=-1) + 1)]
    never = []
    for s, d in enumerate(depth):
        (never if d < 0 else layers[d]).append(s)
    return Partition.from_blocks(model.num_states, layers + [never])


# ---------------------------------------------------------------------------
# signatures


def _action_masses(model: SparseModel, partition: Partition, splitter: int):
    """Per touched action, its exact mass into the splitter; plus visit count."""
    ro, ra, rp = model.rev_offsets, model.rev_actions, model.rev_probs
    order = partition.state_order
    parts: dict[int, list[float]] = {}
    get = parts.get
    visits = 0
    for idx in range(partition.start[splitter], partition.end[splitter]):
        t = order[idx]
        lo, hi = ro[t], ro[t + 1]
        visits += hi - lo
        for i in range(lo, hi):
            a = ra[i]
            lst = get(a)
            if lst is None:
                parts[a] = [rp[i]]
            else:
                lst.append(rp[i])
    masses = {a: (v[0] if len(v) == 1 else fsum(v)) for a, v in parts.items()}
    return masses, visits


def compute_signatures(model: SparseModel, partition: Partition,
                       splitter: int) -> dict[int, set[float]]:
    """Map each state with positive mass into ``splitter`` to its set of masses."""
    masses, _ = _action_masses(model, partition, splitter)
    return _group_by_state(model, masses)


def _group_by_state(model, masses):
    owner = model.action_state
    sigs: dict[int, set[float]] = {}
    for a, v in masses.items():
        s = owner[a]
        sig = sigs.get(s)
        if sig is None:
            sigs[s] = {v}
        else:
            sig.add(v)
    return sigs


def _sort_groups(states, sigs, table):
    keys = {s: tuple(sorted(sigs[s])) for s in states}
    ordered = sorted(states, key=keys.__getitem__)
    groups = []
    prev = None
    for s in ordered:
        k = keys[s]
        if k != prev:
            groups.append([])
            prev = k
        groups[-1].append(s)
    return groups


def _hash_groups(states, sigs, table):
    gid = table.group_id
    buckets: dict[object, list[int]] = {}
    for s in states:
        sig = sigs[s]
        if len(sig) == 1:
            for v in sig:
                key = gid(v)
        else:
            key = frozenset(gid(v) for v in sig)
        lst = buckets.get(key)
        if lst is None:
            buckets[key] = [s]
        else:
            lst.append(s)
    return list(buckets.values())


def _refine(model, partition, splitter, grouping, table) -> RefineOutcome:
    ro, ra, rp = model.rev_offsets, model.rev_actions, model.rev_probs
    order = partition.state_order
    pstart, pend, block_of = partition.start, partition.end, partition.block_of
    st, en = pstart[splitter], pend[splitter]
    parts: dict[int, list[float]] = {}
    for idx in range(st, en):
        t = order[idx]
        for i in range(ro[t], ro[t + 1]):
            a = ra[i]
            lst = parts.get(a)
            if lst is None:
                parts[a] = [rp[i]]
            else:
                lst.append(rp[i])
    visits = sum(ro[t + 1] - ro[t] for t in order[st:en])
    owner = model.action_state
    sigs: dict[int, set[float]] = {}
    by_block: dict[int, list[int]] = {}
    for a, vals in parts.items():
        v = vals[0] if len(vals) == 1 else fsum(vals)
        s = owner[a]
        sig = sigs.get(s)
        if sig is None:
            sigs[s] = {v}
            b = block_of[s]
            lst = by_block.get(b)
            if lst is None:
                by_block[b] = [s]
            else:
                lst.append(s)
        else:
            sig.add(v)
    outcome = RefineOutcome(splitter, en - st, transition_visits=visits,
                            touched_states=len(sigs), touched_blocks=list(by_block))
    for b, states in by_block.items():
        bsize = pend[b] - pstart[b]
        outcome.transition_visits += bsize
        whole = len(states) == bsize
        if whole:
            first = sigs[states[0]]
            if all(sigs[s] == first for s in states):
                continue
        groups = grouping(states, sigs, table)
        if whole and len(groups) == 1:
            continue
        # canonical part order: both backends assign identical block ids
        groups.sort(key=min)
        ids = partition.split(b, groups)
        children = [(c, pend[c] - pstart[c]) for c in ids]
        outcome.splits.append((b, children))
        outcome.largest_child[b] = largest(children)
    return outcome


def largest(children: list[tuple[int, int]]) -> int:
    """Largest child by size, ties broken by lowest block id."""
    return min(children, key=lambda cs: (-cs[1], cs[0]))[0]


def refine_sort(model: SparseModel, partition: Partition, splitter: int) -> RefineOutcome:
    """Split every predecessor block of ``splitter`` by sorted value-set keys."""
    return _refine(model, partition, splitter, _sort_groups, None)


def refine_hash(model: SparseModel, partition: Partition, splitter: int,
                table: ProbTable) -> RefineOutcome:
    """Same result as :func:`refine_sort`, grouping through ``table``."""
    table.new_epoch()
    return _refine(model, partition, splitter, _hash_groups, table)


class Refiner:
    """Binds a backend name to a callable ``refiner(partition, splitter)``."""

    def __init__(self, model: SparseModel, backend: str = "hash",
                 table_size: int = DEFAULT_TABLE_SIZE, act_hash: bool = False):
        if backend not in ("sort", "hash"):
            raise ValueError(f"unknown split backend {backend!r}")
        self.model = model
        self.backend = backend
        self.table = None
        if backend == "hash":
            if act_hash:
                self.table = ProbTable(max(model.num_actions, 1), model.num_actions)
            else:
                self.table = ProbTable(table_size)

    def __call__(self, partition: Partition, splitter: int) -> RefineOutcome:
        if self.table is None:
            return refine_sort(self.model, partition, splitter)
        return refine_hash(self.model, partition, splitter, self.table)

