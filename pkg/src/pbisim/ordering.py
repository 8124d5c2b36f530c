"""Splitter scheduling for partition refinement.

All strategies share one bookkeeping rule.  A block that is split while it is
still waiting in the worklist is replaced by all of its parts.  A block that is
not pending (it was used already, or it is covered by its parent) contributes
all parts except the largest.  When the worklist drains, a full stability
sweep runs; any block it finds unstable is split directly by its complete
signature, the parts are scheduled, and the loop resumes.  ``fallback_count``
records how often that happened.
"""

from __future__ import annotations

import heapq
import math
import random
import time
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

from .model import SparseModel
from .partition import Partition
from .quotient import unstable_blocks
from .refine import (DEFAULT_TABLE_SIZE, Refiner, bfs_depths, initial_partition_bfs_layers,
                     initial_partition_two_block)

STRATEGIES = ("random", "topological", "topological_cyclic", "size_heap", "size_hybrid")
CLI_ORDERINGS = {
    "random": "random",
    "topo": "topological",
    "topo-cyclic": "topological_cyclic",
    "size": "size_heap",
    "size-hybrid": "size_hybrid",
}


class CyclicModel(ValueError):
    pass


class SplitterRef(NamedTuple):
    block: int
    generation: int


@dataclass
class RefineConfig:
    seed: int = 0
    table_size: int = DEFAULT_TABLE_SIZE
    act_hash: bool = False
    hybrid_c: float = 8.0
    enqueue_all_children: bool = False
    audit: bool = False


@dataclass
class RunStats:
    num_states: int
    strategy: str = ""
    backend: str = ""
    refine_calls: int = 0
    splitter_mass: int = 0
    stale_skips: int = 0
    enqueues: int = 0
    fallback_count: int = 0
    transition_visits: int = 0
    final_blocks: int = 0
    wall_ms: float = 0.0
    splitters: list[tuple[int, int]] = field(default_factory=list, repr=False)

    @property
    def spl_avg(self) -> float:
        return self.splitter_mass / self.num_states


# ---------------------------------------------------------------------------
# schedules


def hybrid_thresholds(num_states: int, c: float) -> tuple[int, int]:
    lg = math.log2(max(num_states, 2))
    return math.ceil(lg), math.ceil(c * lg)


class SplitterSchedule:
    """Worklist of pending splitters; ``pop`` never returns a stale reference."""

    def __init__(self, strategy: str, num_states: int, seed: int = 0,
                 hybrid_c: float = 8.0):
        if strategy not in ("random", "fifo", "size_heap", "size_hybrid"):
            raise ValueError(f"unknown schedule {strategy!r}")
        self.strategy = strategy
        self.rng = random.Random(seed)
        self.t1, self.t2 = hybrid_thresholds(num_states, hybrid_c)
        self.items: list[SplitterRef] = []        # random
        self.fifo: deque[SplitterRef] = deque()   # fifo and hybrid queue 1
        self.fifo2: deque[SplitterRef] = deque()  # hybrid queue 2
        self.heap: list[tuple[int, int, SplitterRef]] = []
        self._tick = 0
        self.pending: dict[int, int] = {}         # block -> generation when queued
        self.stale_skips = 0
        self.pushes = 0

    def __len__(self):
        return len(self.items) + len(self.fifo) + len(self.fifo2) + len(self.heap)

    def is_pending(self, block: int, generation: int) -> bool:
        return self.pending.get(block) == generation

    def push(self, block: int, generation: int, size: int) -> None:
        ref = SplitterRef(block, generation)
        self.pending[block] = generation
        self.pushes += 1
        if self.strategy == "random":
            self.items.append(ref)
        elif self.strategy == "fifo":
            self.fifo.append(ref)
        elif self.strategy == "size_hybrid" and size <= self.t1:
            self.fifo.append(ref)
        elif self.strategy == "size_hybrid" and size <= self.t2:
            self.fifo2.append(ref)
        else:
            self._tick += 1
            heapq.heappush(self.heap, (size, self._tick, ref))

    def _take(self) -> SplitterRef | None:
        if self.strategy == "random":
            if not self.items:
                return None
            i = self.rng.randrange(len(self.items))
            items = self.items
            items[i], items[-1] = items[-1], items[i]
            return items.pop()
        if self.fifo:
            return self.fifo.popleft()
        if self.fifo2:
            return self.fifo2.popleft()
        if self.heap:
            return heapq.heappop(self.heap)[2]
        return None

    def pop(self, partition: Partition) -> SplitterRef | None:
        while True:
            ref = self._take()
            if ref is None:
                return None
            if partition.generation[ref.block] != ref.generation:
                self.stale_skips += 1
                continue
            del self.pending[ref.block]
            return ref


# ---------------------------------------------------------------------------
# drivers


def _schedule_children(sched, partition, outcome, was_pending, enqueue_all):
    for parent, children in outcome.splits:
        skip = None
        if not (enqueue_all or was_pending.get(parent)):
            skip = outcome.largest_child[parent]
        for child, size in children:
            if child != skip:
                sched.push(child, partition.generation[child], size)


def _fallback(model, partition, push) -> bool:
    """Split every unstable block by full signature; False if already stable."""
    bad = unstable_blocks(model, partition)
    for b, groups in sorted(bad.items()):
        groups.sort(key=min)
        # the residual of Partition.split is empty here: every member is in a group
        for child in partition.split(b, groups):
            push(child)
    return bool(bad)


def run_refinement(model: SparseModel, initial: Partition, strategy: str = "size_heap",
                   split_backend: str = "hash", config: RefineConfig | None = None
                   ) -> tuple[Partition, RunStats]:
    """Refine ``initial`` to the coarsest probabilistic bisimulation.

    ``strategy`` is one of :data:`STRATEGIES`.  ``"topological"`` requires an
    acyclic model and delegates to :func:`topological_acyclic`.
    """
    config = config or RefineConfig()
    if strategy == "topological":
        return topological_acyclic(model, initial, split_backend, config)
    if strategy == "topological_cyclic":
        return topological_cyclic_heuristic(model, initial, split_backend, config)
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    return _worklist_run(model, initial, strategy, strategy, split_backend, config)


def _worklist_run(model, initial, schedule_kind, strategy, split_backend, config):
    t0 = time.perf_counter()
    partition = initial.copy()
    refiner = Refiner(model, split_backend, config.table_size, config.act_hash)
    sched = SplitterSchedule(schedule_kind, model.num_states, config.seed, config.hybrid_c)
    stats = RunStats(model.num_states, strategy, split_backend)

    def push(b):
        sched.push(b, partition.generation[b], partition.size(b))

    for b in range(partition.num_blocks):
        push(b)
    while True:
        while (ref := sched.pop(partition)) is not None:
            size = partition.size(ref.block)
            pending_before = {}
            outcome = refiner(partition, ref.block)
            for parent, _ in outcome.splits:
                pending_before[parent] = sched.is_pending(
                    parent, partition.generation[parent] - 1)
            _schedule_children(sched, partition, outcome, pending_before,
                               config.enqueue_all_children)
            stats.refine_calls += 1
            stats.splitter_mass += size
            stats.transition_visits += outcome.transition_visits
            stats.splitters.append((ref.block, size))
            if config.audit:
                partition.audit()
        if not _fallback(model, partition, push):
            break
        stats.fallback_count += 1
    stats.stale_skips = sched.stale_skips
    stats.enqueues = sched.pushes
    stats.final_blocks = partition.num_blocks
    stats.wall_ms = (time.perf_counter() - t0) * 1000.0
    return partition, stats


def topological_cyclic_heuristic(model: SparseModel, initial_bfs_layers: Partition,
                                 split_backend: str = "hash",
                                 config: RefineConfig | None = None
                                 ) -> tuple[Partition, RunStats]:
    """FIFO worklist seeded with the reverse-BFS layers, goal layer first."""
    config = config or RefineConfig()
    return _worklist_run(model, initial_bfs_layers, "fifo", "topological_cyclic",
                         split_backend, config)


def find_cycle(model: SparseModel) -> list[int] | None:
    """A cycle of the state graph, or None.

    Self-loops of absorbing states (every action a probability-1 self-loop) are
    ignored; every other transition, including those leaving goal states, counts.
    """
    n = model.num_states
    ao, to, tg = model.action_offsets, model.trans_offsets, model.targets
    absorbing = [model.is_absorbing(s) for s in range(n)]
    color = [0] * n  # 0 new, 1 on stack, 2 done
    parent = [-1] * n
    for root in range(n):
        if color[root] or absorbing[root]:
            continue
        stack = [(root, to[ao[root]])]
        color[root] = 1
        while stack:
            s, i = stack[-1]
            if i == to[ao[s + 1]]:
                color[s] = 2
                stack.pop()
                continue
            stack[-1] = (s, i + 1)
            t = tg[i]
            if absorbing[t] or color[t] == 2:
                continue
            if color[t] == 1:
                cycle = [t]
                for u, _ in reversed(stack):
                    if u == t:
                        break
                    cycle.append(u)
                return cycle[::-1]
            color[t] = 1
            parent[t] = s
            stack.append((t, to[ao[t]]))
    return None


def topological_acyclic(model: SparseModel, initial: Partition,
                        split_backend: str = "hash", config: RefineConfig | None = None
                        ) -> tuple[Partition, RunStats]:
    """Splitters in topological order for acyclic models.

    The list starts with the goal block and the block of states that cannot
    reach the goal at all.  After a splitter is used, all
    transitions entering it are marked; a block joins the list once every
    outgoing transition of its members is marked.  Each block is used at most
    once, so the splitter mass never exceeds the number of states.
    """
    config = config or RefineConfig()
    cycle = find_cycle(model)
    if cycle is not None:
        raise CyclicModel(f"model has a cycle through states {cycle[:8]}; "
                          "use the topo-cyclic ordering")
    t0 = time.perf_counter()
    partition = initial.copy()
    refiner = Refiner(model, split_backend, config.table_size, config.act_hash)
    stats = RunStats(model.num_states, "topological", split_backend)
    n = model.num_states
    ao, to = model.action_offsets, model.trans_offsets
    ro, rs = model.rev_offsets, model.rev_states

    # unmarked outgoing transitions per state; absorbing self-loops start marked
    absorbing = [model.is_absorbing(s) for s in range(n)]
    counter = [0 if absorbing[s] else to[ao[s + 1]] - to[ao[s]] for s in range(n)]
    aggregate = [0] * partition.num_blocks
    for s in range(n):
        aggregate[partition.block_of[s]] += counter[s]
    queued = [False] * partition.num_blocks
    work: deque[SplitterRef] = deque()

    def enqueue(b):
        while len(queued) <= b:
            queued.append(False)
        if not queued[b]:
            queued[b] = True
            work.append(SplitterRef(b, partition.generation[b]))
            stats.enqueues += 1

    # States that cannot reach G always form one class of the result.  Their
    # block is terminal like G itself, so it is split off and seeded as well.
    depth = bfs_depths(model)
    hopeless = [s for s in range(n) if depth[s] < 0]
    if hopeless:
        by_block: dict[int, list[int]] = {}
        for s in hopeless:
            by_block.setdefault(partition.block_of[s], []).append(s)
        for b, group in sorted(by_block.items()):
            ids = partition.split(b, [group])
            for child in ids:
                while len(aggregate) <= child:
                    aggregate.append(0)
                aggregate[child] = sum(counter[s] for s in partition.members(child))
    seeds = {partition.block_of[s] for s in range(n) if model.goal_mask[s]}
    seeds.update(partition.block_of[s] for s in hopeless)
    for b in sorted(seeds):
        enqueue(b)
    while True:
        while work:
            ref = work.popleft()
            if partition.generation[ref.block] != ref.generation:
                stats.stale_skips += 1
                queued[ref.block] = False
                continue
            c = ref.block
            size = partition.size(c)
            members = partition.members(c)
            outcome = refiner(partition, c)
            stats.refine_calls += 1
            stats.splitter_mass += size
            stats.transition_visits += outcome.transition_visits
            stats.splitters.append((c, size))
            # aggregates of the parts: non-largest parts summed, largest by difference
            for parent, children in outcome.splits:
                total = aggregate[parent]
                big = outcome.largest_child[parent]
                for child, _ in children:
                    while len(aggregate) <= child:
                        aggregate.append(0)
                    if child != big:
                        aggregate[child] = sum(counter[s] for s in partition.members(child))
                        total -= aggregate[child]
                aggregate[big] = total
            # an untouched residual can reach zero through the split alone
            candidates = {child for _, children in outcome.splits for child, _ in children}
            for t in members:
                for i in range(ro[t], ro[t + 1]):
                    s = rs[i]
                    if s == t and absorbing[t]:
                        continue
                    counter[s] -= 1
                    b = partition.block_of[s]
                    aggregate[b] -= 1
                    candidates.add(b)
            for b in sorted(candidates):
                if aggregate[b] == 0:
                    enqueue(b)
            if config.audit:
                partition.audit()

        def push(b):
            while len(aggregate) <= b:
                aggregate.append(0)
            aggregate[b] = sum(counter[s] for s in partition.members(b))
            while len(queued) <= b:
                queued.append(False)
            queued[b] = False
            enqueue(b)

        if not _fallback(model, partition, push):
            break
        stats.fallback_count += 1
    stats.final_blocks = partition.num_blocks
    stats.wall_ms = (time.perf_counter() - t0) * 1000.0
    return partition, stats


def initial_for(strategy: str, model: SparseModel, initial: str = "two-block") -> Partition:
    """Initial partition for a strategy; the cyclic heuristic always uses BFS layers."""
    if strategy == "topological_cyclic" or initial == "bfs-layers":
        return initial_partition_bfs_layers(model)
    if initial != "two-block":
        raise ValueError(f"unknown initial partition {initial!r}")
    return initial_partition_two_block(model)


def minimize(model: SparseModel, strategy: str = "size_heap", split_backend: str = "hash",
             initial: str = "two-block", config: RefineConfig | None = None
             ) -> tuple[Partition, RunStats]:
    return run_refinement(model, initial_for(strategy, model, initial), strategy,
                          split_backend, config)
