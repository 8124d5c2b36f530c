"""Gauss-Seidel value iteration for extremal reachability probabilities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .model import SparseModel
from .quotient import QuotientModel
from .refine import bfs_depths


class NotConverged(RuntimeError):
    def __init__(self, result: "ReachResult"):
        self.result = result
        super().__init__(f"value iteration did not converge in {result.iterations} sweeps")


@dataclass(frozen=True)
class ReachQuery:
    objective: str = "max"
    epsilon: float = 1e-6
    max_iters: int = 1_000_000
    precompute: str = "none"
    relative: bool = False

    def __post_init__(self):
        if self.objective not in ("max", "min"):
            raise ValueError(f"objective must be 'max' or 'min', not {self.objective!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.precompute not in ("none", "qualitative"):
            raise ValueError(f"unknown precompute mode {self.precompute!r}")


@dataclass
class ReachResult:
    values: list[float]
    iterations: int
    converged: bool


def gauss_seidel_reach(model: SparseModel, query: ReachQuery | None = None,
                       on_sweep: Callable[[int, list[float]], None] | None = None
                       ) -> ReachResult:
    """Max or min probability of eventually reaching a goal state, per state.

    Values start at 0 (1 on goal states) and are updated in place in ascending
    state order.  Iteration stops once the largest change of a sweep is at most
    ``epsilon`` (relative to the new value if ``query.relative``).
    """
    query = query or ReachQuery()
    n = model.num_states
    goal = model.goal_mask
    x = [1.0 if goal[s] else 0.0 for s in range(n)]
    active = [s for s in range(n) if not goal[s]]
    if query.precompute == "qualitative":
        depth = bfs_depths(model)
        active = [s for s in active if depth[s] >= 0]
    ao, to, tg, pr = model.action_offsets, model.trans_offsets, model.targets, model.probs
    # flatten per-state action ranges once; the inner loop is the hot path
    rows = [[list(zip(tg[to[a]:to[a + 1]], pr[to[a]:to[a + 1]]))
             for a in range(ao[s], ao[s + 1])] for s in active]
    plan = list(zip(active, rows))
    use_max = query.objective == "max"
    eps, relative = query.epsilon, query.relative
    it = 0
    while it < query.max_iters:
        it += 1
        delta = 0.0
        for s, acts in plan:
            best = None
            for dist in acts:
                v = 0.0
                for t, p in dist:
                    v += p * x[t]
                if best is None or (v > best if use_max else v < best):
                    best = v
            if best > 1.0:
                best = 1.0
            d = abs(best - x[s])
            if relative and best > 0.0:
                d /= best
            if d > delta:
                delta = d
            x[s] = best
        if on_sweep is not None:
            on_sweep(it, x)
        if delta <= eps:
            return ReachResult(x, it, True)
    raise NotConverged(ReachResult(x, it, False))


@dataclass
class ReachReport:
    max_deviation: float
    worst_state: int
    tolerance: float
    deviations: dict[str, float]

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tolerance


def verify_quotient_reach(model: SparseModel, quotient: QuotientModel,
                          epsilon: float = 1e-8, tolerance: float = 1e-5) -> ReachReport:
    """Compare max and min reachability on ``model`` and its quotient, state by state."""
    worst, worst_state = 0.0, 0
    per_objective = {}
    for objective in ("max", "min"):
        q = ReachQuery(objective=objective, epsilon=epsilon)
        orig = gauss_seidel_reach(model, q).values
        quot = gauss_seidel_reach(quotient.model, q).values
        dev, arg = 0.0, 0
        for s, b in enumerate(quotient.block_map):
            d = abs(orig[s] - quot[b])
            if d > dev:
                dev, arg = d, s
        per_objective[objective] = dev
        if dev > worst:
            worst, worst_state = dev, arg
    return ReachReport(worst, worst_state, tolerance, per_objective)
