"""Seeded model generators and the strategy-comparison harness."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import random
import statistics
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from math import fsum

from .model import SparseModel, write_model
from .ordering import RefineConfig, find_cycle, minimize
from .partition import partitions_equal
from .quotient import build_quotient
from .reach import ReachQuery, gauss_seidel_reach, verify_quotient_reach

FAMILIES = ("layered_dag", "cyclic_layered", "random_mdp", "chain", "grid_dice")


@dataclass(frozen=True)
class GenSpec:
    family: str
    num_states: int
    actions: tuple[int, int] = (1, 2)
    fanout: tuple[int, int] = (1, 3)
    granularity: int = 4
    seed: int = 0
    duplication: int = 1
    layers: int | None = None
    back_edges: float = 0.1
    goal_fraction: float = 0.1

    def validate(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.num_states < 1:
            raise ValueError("num_states must be positive")
        for name in ("actions", "fanout"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ValueError(f"{name} range must satisfy 1 <= lo <= hi")
        if self.granularity < 1:
            raise ValueError("granularity must be positive")
        if self.duplication < 1 or self.num_states < self.duplication:
            raise ValueError("duplication must be in [1, num_states]")
        if not 0.0 <= self.back_edges <= 1.0:
            raise ValueError("back_edges is a probability")
        if not 0.0 < self.goal_fraction <= 1.0:
            raise ValueError("goal_fraction must be in (0, 1]")
        if self.layers is not None and self.layers < 2:
            raise ValueError("need at least two layers")


def _weights(rng: random.Random, k: int, granularity: int) -> list[float]:
    w = [rng.randint(1, granularity) for _ in range(k)]
    total = sum(w)
    return [x / total for x in w]


def _merge(pairs):
    acc: dict[int, list[float]] = {}
    for t, p in pairs:
        acc.setdefault(t, []).append(p)
    return sorted((t, fsum(v)) for t, v in acc.items())


def _random_actions(rng, spec, candidates):
    acts = []
    for _ in range(rng.randint(*spec.actions)):
        k = min(rng.randint(*spec.fanout), len(candidates))
        targets = rng.sample(candidates, k)
        acts.append(list(zip(targets, _weights(rng, k, spec.granularity))))
    return acts


def _layer_bounds(n, layers):
    return [round(i * n / layers) for i in range(layers + 1)]


def _layered(rng, spec, n, cyclic):
    layers = spec.layers or max(3, min(n, round(math.sqrt(n) / 1.5)))
    layers = min(layers, n)
    bounds = _layer_bounds(n, layers)
    last = range(bounds[-2], bounds[-1])
    choices = [None] * n
    goal = [s for s in last if rng.random() < 0.5] or [last[0]]
    for s in last:
        choices[s] = [[(s, 1.0)]]
    for i in range(layers - 1):
        nxt = list(range(bounds[i + 1], bounds[i + 2]))
        earlier = list(range(0, bounds[i + 1]))
        for s in range(bounds[i], bounds[i + 1]):
            acts = _random_actions(rng, spec, nxt)
            if cyclic:
                for j, dist in enumerate(acts):
                    if rng.random() < spec.back_edges:
                        back = rng.choice(earlier)
                        w = _weights(rng, len(dist) + 1, spec.granularity)
                        acts[j] = _merge(zip([t for t, _ in dist] + [back], w))
            choices[s] = acts
    return choices, goal


def _random_mdp(rng, spec, n):
    everything = list(range(n))
    choices = [_random_actions(rng, spec, everything) for _ in range(n)]
    k = max(1, round(spec.goal_fraction * n))
    return choices, rng.sample(everything, k)


def _chain(n):
    choices = [[[(s + 1, 1.0)]] for s in range(n - 1)] + [[[(n - 1, 1.0)]]]
    return choices, [n - 1]


def _grid_dice(n):
    """Square grid; two actions each roll a three-sided die east or north."""
    w = max(2, math.isqrt(n))
    top = w - 1
    choices = []
    for s in range(w * w):
        x, y = divmod(s, w)
        if x == top and y == top:
            choices.append([[(s, 1.0)]])
            continue
        east = _merge((min(x + d, top) * w + y, 1 / 3) for d in (1, 2, 3))
        north = _merge((x * w + min(y + d, top), 1 / 3) for d in (1, 2, 3))
        choices.append([east, north])
    return choices, [w * w - 1]


def _duplicate(rng, choices, goal, dup):
    """Replace every state by ``dup`` bisimilar copies."""
    out = []
    for s, acts in enumerate(choices):
        for j in range(dup):
            # self-loops stay on the same copy so acyclic models stay acyclic
            out.append([_merge((t * dup + (j if t == s else rng.randrange(dup)), p)
                               for t, p in dist) for dist in acts])
    return out, [g * dup + j for g in goal for j in range(dup)]


def generate(spec: GenSpec) -> SparseModel:
    """Deterministic model for ``spec``; the same seed gives the same model."""
    spec.validate()
    rng = random.Random(spec.seed)
    base_n = spec.num_states // spec.duplication
    if spec.family == "chain":
        choices, goal = _chain(base_n)
    elif spec.family == "grid_dice":
        choices, goal = _grid_dice(base_n)
    elif spec.family == "random_mdp":
        choices, goal = _random_mdp(rng, spec, base_n)
    else:
        choices, goal = _layered(rng, spec, base_n, spec.family == "cyclic_layered")
    if spec.duplication > 1:
        choices, goal = _duplicate(rng, choices, goal, spec.duplication)
    model = SparseModel.from_choices(choices, goal=goal, initial=0)
    if spec.family == "layered_dag" and find_cycle(model) is not None:
        raise AssertionError("layered_dag generator produced a cycle")
    return model


# ---------------------------------------------------------------------------
# experiments

REPORT_FIELDS = ("model", "strategy", "backend", "seed", "num_states", "wall_time",
                 "refine_calls", "splitter_mass", "spl_avg", "stale_skips",
                 "fallback_count", "final_num_blocks", "quotient_states")


class StrategyDisagreement(AssertionError):
    def __init__(self, message: str, bundle: str):
        self.bundle = bundle
        super().__init__(f"{message} (reproducer bundle: {bundle})")


@dataclass
class ExperimentReport:
    rows: list[dict] = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps({k: r[k] for k in REPORT_FIELDS}) + "\n" for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, extrasaction="ignore",
                           lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows)
        return buf.getvalue()

    def by_strategy(self, key: str = "spl_avg") -> dict[str, list[float]]:
        out: dict[str, list[float]] = {}
        for r in self.rows:
            out.setdefault(r["strategy"], []).append(r[key])
        return out

    def mean(self, strategy: str, key: str = "spl_avg") -> float:
        return statistics.fmean(self.by_strategy(key)[strategy])


def _run_one(args):
    name, model, strategy, backend, seed, config = args
    config = RefineConfig(**{**asdict(config), "seed": seed})
    partition, stats = minimize(model, strategy, backend, config=config)
    row = {
        "model": name, "strategy": strategy, "backend": backend, "seed": seed,
        "num_states": model.num_states, "wall_time": round(stats.wall_ms, 3),
        "refine_calls": stats.refine_calls, "splitter_mass": stats.splitter_mass,
        "spl_avg": stats.spl_avg, "stale_skips": stats.stale_skips,
        "fallback_count": stats.fallback_count,
        "final_num_blocks": partition.num_blocks,
        "quotient_states": partition.num_blocks,
    }
    return row, partition.canonical_labels()


def write_bundle(model: SparseModel, info: dict, directory: str | None = None) -> str:
    directory = directory or tempfile.mkdtemp(prefix="pbisim-repro-")
    os.makedirs(directory, exist_ok=True)
    tra, lab = write_model(model)
    with open(os.path.join(directory, "model.tra"), "w") as f:
        f.write(tra)
    with open(os.path.join(directory, "model.lab"), "w") as f:
        f.write(lab)
    with open(os.path.join(directory, "info.json"), "w") as f:
        json.dump(info, f, indent=2)
    return directory


def compare_strategies(models, strategies, backends=("hash",), seeds=(0,),
                       config: RefineConfig | None = None, workers: int = 1,
                       bundle_dir: str | None = None) -> ExperimentReport:
    """Run every (model, strategy, backend, seed) combination.

    ``models`` is a list of ``(name, SparseModel)`` pairs.  All runs on one
    model must agree on the final partition; otherwise a reproducer bundle is
    written and :class:`StrategyDisagreement` is raised.
    """
    config = config or RefineConfig()
    jobs = [(name, m, st, be, sd, config) for name, m in models
            for st in strategies for be in backends for sd in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_run_one(j) for j in jobs]
    report = ExperimentReport()
    reference: dict[str, tuple[dict, list[int]]] = {}
    by_name = dict(models)
    for (row, labels) in results:
        ref = reference.setdefault(row["model"], (row, labels))
        if ref[1] != labels:
            info = {"model": row["model"],
                    "runs": [{k: ref[0][k] for k in ("strategy", "backend", "seed")},
                             {k: row[k] for k in ("strategy", "backend", "seed")}]}
            bundle = write_bundle(by_name[row["model"]], info, bundle_dir)
            raise StrategyDisagreement(f"strategies disagree on {row['model']}", bundle)
        report.rows.append(row)
    return report


@dataclass
class PipelineTiming:
    t_direct: float          # ms, value iteration on the original model
    t_bisim: float           # ms, minimisation including quotient construction
    t_vi_quotient: float     # ms, value iteration on the quotient
    num_states: int
    quotient_states: int
    direct_iterations: int
    quotient_iterations: int
    max_deviation: float

    @property
    def t_total_bisim(self) -> float:
        return self.t_bisim + self.t_vi_quotient


def _median_ms(fn, repeats):
    times, result = [], None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        times.append((time.perf_counter() - t0) * 1000.0)
    return statistics.median(times), result


def pipeline_timing(model: SparseModel, strategy: str = "size_heap", backend: str = "hash",
                    epsilon: float = 1e-6, repeats: int = 3,
                    objective: str = "max") -> PipelineTiming:
    """Direct model checking versus minimise-then-check, median of ``repeats`` runs."""
    query = ReachQuery(objective=objective, epsilon=epsilon)
    t_direct, direct = _median_ms(lambda: gauss_seidel_reach(model, query), repeats)

    def bisim():
        partition, _ = minimize(model, strategy, backend)
        return build_quotient(model, partition, check=False)

    t_bisim, quotient = _median_ms(bisim, repeats)
    t_q, qres = _median_ms(lambda: gauss_seidel_reach(quotient.model, query), repeats)
    dev = max(abs(direct.values[s] - qres.values[b])
              for s, b in enumerate(quotient.block_map))
    return PipelineTiming(t_direct, t_bisim, t_q, model.num_states,
                          quotient.model.num_states, direct.iterations,
                          qres.iterations, dev)


def check_pipeline_values(model: SparseModel, strategy: str = "size_heap",
                          epsilon: float = 1e-8) -> float:
    """Largest max/min reachability deviation between a model and its quotient."""
    partition, _ = minimize(model, strategy)
    return verify_quotient_reach(model, build_quotient(model, partition), epsilon).max_deviation
