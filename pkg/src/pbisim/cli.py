"""Command-line front end: ``pbisim {minimize,check,verify,gen,bench}``.

Exit codes: 0 success, 2 bad input or flags, 3 internal invariant failure,
4 value iteration did not converge, 5 oracle mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile

from .bench import FAMILIES, GenSpec, compare_strategies, generate, pipeline_timing, write_bundle
from .model import ModelError, read_model, write_model
from .ordering import CLI_ORDERINGS, CyclicModel, RefineConfig, find_cycle, minimize
from .partition import Partition, partitions_equal
from .quotient import (MixedGoalBlock, UnstablePartition, build_quotient, check_stability,
                       oracle_bisimulation)
from .reach import NotConverged, ReachQuery, gauss_seidel_reach
from .refine import initial_partition_two_block

log = logging.getLogger("pbisim")

EXIT_INPUT, EXIT_INTERNAL, EXIT_NOT_CONVERGED, EXIT_MISMATCH = 2, 3, 4, 5
STATS_SCHEMA = 1


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def write_atomic(files: dict[str, str]) -> None:
    """Write all files to temporaries first, then rename them into place."""
    staged = []
    try:
        for path, text in files.items():
            d = os.path.dirname(os.path.abspath(path))
            os.makedirs(d, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=d, prefix=".pbisim-", suffix=".tmp")
            with os.fdopen(fd, "w") as f:
                f.write(text)
            staged.append((tmp, path))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, path in staged:
        os.replace(tmp, path)


# ---------------------------------------------------------------------------
# argument handling


def _add_model_args(p):
    p.add_argument("tra", help="transition file (.tra)")
    p.add_argument("lab", help="label file (.lab)")
    p.add_argument("--goal-label", default="goal")
    p.add_argument("--strict", action="store_true", help="reject deadlock states")


def _add_refine_args(p):
    p.add_argument("--ordering", choices=sorted(CLI_ORDERINGS), default="size")
    p.add_argument("--split", choices=("sort", "hash"), default="hash")
    p.add_argument("--initial", choices=("two-block", "bfs-layers"), default=None,
                   help="initial partition (default two-block; topo-cyclic forces bfs-layers)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hash-size", type=int, default=10000)
    p.add_argument("--act-hash", action="store_true",
                   help="use the |Act|-sized table variant of the hash function")
    p.add_argument("--hybrid-c", type=float, default=8.0)
    p.add_argument("--enqueue-all-children", action="store_true")


def _add_query_args(p):
    p.add_argument("--objective", choices=("max", "min"), default="max")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--max-iters", type=int, default=1_000_000)
    p.add_argument("--precompute", choices=("none", "qualitative"), default="none")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pbisim", description="Probabilistic bisimulation minimisation of MDPs and DTMCs.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("minimize", help="compute the quotient model")
    _add_model_args(p)
    _add_refine_args(p)
    p.add_argument("-o", "--output", required=True,
                   help="output prefix: writes PREFIX.tra, PREFIX.lab, PREFIX.map")
    p.add_argument("--stats-json", default=None,
                   help="stats file (default PREFIX.stats.json)")
    p.add_argument("--no-check", action="store_true",
                   help="skip the final stability audit")

    p = sub.add_parser("check", help="reachability probability of the initial state")
    _add_model_args(p)
    _add_query_args(p)
    _add_refine_args(p)
    p.add_argument("--via-bisim", action="store_true", help="minimise first, check the quotient")

    p = sub.add_parser("verify", help="compare a strategy against the brute-force oracle")
    _add_model_args(p)
    _add_refine_args(p)
    p.add_argument("--bundle-dir", default=None)
    p.add_argument("--max-states", type=int, default=5000)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("gen", help="generate a synthetic model")
    _add_gen_args(p)
    p.add_argument("-o", "--output", required=True, help="output prefix")

    p = sub.add_parser("bench", help="compare strategies on a generated suite")
    _add_gen_args(p)
    p.add_argument("--models", type=int, default=10, help="suite size (seeds seed..seed+N-1)")
    p.add_argument("--strategies", default="random,size,size-hybrid,topo-cyclic")
    p.add_argument("--backends", default="hash")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--pipeline", action="store_true",
                   help="also time direct vs minimise-then-check on the first model")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--out-dir", required=True)
    return parser


def _add_gen_args(p):
    p.add_argument("--family", choices=FAMILIES, default="layered_dag")
    p.add_argument("--states", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--actions", type=int, nargs=2, default=(1, 2), metavar=("LO", "HI"))
    p.add_argument("--fanout", type=int, nargs=2, default=(1, 3), metavar=("LO", "HI"))
    p.add_argument("--granularity", type=int, default=4)
    p.add_argument("--duplication", type=int, default=1)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--back-edges", type=float, default=0.1)
    p.add_argument("--goal-fraction", type=float, default=0.1)


def _gen_spec(args, seed=None) -> GenSpec:
    spec = GenSpec(args.family, args.states, tuple(args.actions), tuple(args.fanout),
                   args.granularity, args.seed if seed is None else seed, args.duplication,
                   args.layers, args.back_edges, args.goal_fraction)
    try:
        spec.validate()
    except ValueError as e:
        raise CliError(str(e)) from None
    return spec


def _refine_config(args) -> RefineConfig:
    if args.hash_size < 1:
        raise CliError("--hash-size must be positive")
    if args.hybrid_c <= 0:
        raise CliError("--hybrid-c must be positive")
    return RefineConfig(seed=args.seed, table_size=args.hash_size, act_hash=args.act_hash,
                        hybrid_c=args.hybrid_c, enqueue_all_children=args.enqueue_all_children)


def _strategy(args) -> tuple[str, str]:
    strategy = CLI_ORDERINGS[args.ordering]
    initial = args.initial or "two-block"
    if strategy == "topological_cyclic" and args.initial == "two-block":
        log.warning("topo-cyclic always starts from bfs-layers; ignoring --initial two-block")
    return strategy, initial


def _load(args):
    try:
        return read_model(args.tra, args.lab, args.goal_label, args.strict)
    except OSError as e:
        raise CliError(f"cannot read model: {e}") from None
    except ModelError as e:
        raise CliError(f"{args.tra}: {e}") from None


def _check_acyclic(model, strategy):
    if strategy == "topological":
        cycle = find_cycle(model)
        if cycle is not None:
            raise CliError(f"--ordering topo needs an acyclic model, but states {cycle[:8]} "
                           "form a cycle; use --ordering topo-cyclic")


def _run_minimize(model, args):
    strategy, initial = _strategy(args)
    config = _refine_config(args)
    _check_acyclic(model, strategy)
    try:
        return minimize(model, strategy, args.split, initial, config)
    except CyclicModel as e:
        raise CliError(str(e)) from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_minimize(args) -> int:
    model = _load(args)
    partition, stats = _run_minimize(model, args)
    try:
        quotient = build_quotient(model, partition, check=not args.no_check)
    except UnstablePartition as e:
        w = e.witness
        raise CliError(f"internal error: result is not a bisimulation: {e}\n"
                       f"  block {w.block} members: {sorted(partition.members(w.block))[:20]}",
                       EXIT_INTERNAL) from None
    except MixedGoalBlock as e:
        raise CliError(f"internal error: {e}", EXIT_INTERNAL) from None
    tra, lab = write_model(quotient.model, args.goal_label)
    summary = {
        "schema": STATS_SCHEMA,
        "num_states": model.num_states,
        "num_actions": model.num_actions,
        "num_transitions": model.num_transitions,
        "quotient_states": quotient.model.num_states,
        "refine_calls": stats.refine_calls,
        "splitter_mass": stats.splitter_mass,
        "spl_avg": stats.spl_avg,
        "stale_skips": stats.stale_skips,
        "fallback_count": stats.fallback_count,
        "wall_ms": round(stats.wall_ms, 3),
    }
    prefix = args.output
    write_atomic({
        prefix + ".tra": tra,
        prefix + ".lab": lab,
        prefix + ".map": quotient.block_map_text(),
        args.stats_json or prefix + ".stats.json": json.dumps(summary, indent=2) + "\n",
    })
    print(f"{model.num_states} states -> {quotient.model.num_states} blocks "
          f"(SplAvg {stats.spl_avg:.3f}, {stats.refine_calls} refine calls)")
    return 0


def cmd_check(args) -> int:
    model = _load(args)
    try:
        query = ReachQuery(args.objective, args.epsilon, args.max_iters, args.precompute)
    except ValueError as e:
        raise CliError(str(e)) from None
    target, initial = model, model.initial
    if args.via_bisim:
        partition, _ = _run_minimize(model, args)
        quotient = build_quotient(model, partition, check=False)
        target, initial = quotient.model, quotient.block_map[model.initial]
    try:
        result = gauss_seidel_reach(target, query)
    except NotConverged as e:
        print(f"value {e.result.values[initial]!r} (not converged)")
        print(f"iterations {e.result.iterations}")
        return EXIT_NOT_CONVERGED
    print(f"value {result.values[initial]!r}")
    print(f"iterations {result.iterations}")
    return 0


def _inject_fault(model, partition: Partition) -> Partition:
    """Merge two blocks of equal goal status, or split one; test hook only."""
    labels = partition.canonical_labels()
    k = max(labels) + 1
    goal_of = {}
    for s, b in enumerate(labels):
        goal_of.setdefault(model.goal_mask[s], []).append(b)
    for blocks in goal_of.values():
        distinct = sorted(set(blocks))
        if len(distinct) >= 2:
            a, b = distinct[:2]
            return Partition(model.num_states, [a if x == b else x for x in labels])
    big = [s for s in range(model.num_states) if partition.size(partition.block_of[s]) > 1]
    if not big:
        raise CliError("cannot inject a fault into this model")
    labels[big[0]] = k
    return Partition(model.num_states, labels)


def cmd_verify(args) -> int:
    model = _load(args)
    if model.num_states > args.max_states:
        raise CliError(f"model has {model.num_states} states; the oracle is limited to "
                       f"--max-states {args.max_states}")
    strategy, _ = _strategy(args)
    partition, stats = _run_minimize(model, args)
    if args.inject_fault:
        partition = _inject_fault(model, partition)
    oracle = oracle_bisimulation(model, initial_partition_two_block(model))
    witness = check_stability(model, partition)
    equal = partitions_equal(partition, oracle)
    if equal and witness is None:
        print(f"ok: {strategy}/{args.split} matches the oracle ({oracle.num_blocks} blocks)")
        return 0
    info = {"strategy": strategy, "backend": args.split, "seed": args.seed,
            "equal": equal, "witness": witness._asdict() if witness else None,
            "partition": partition.canonical_labels(), "oracle": oracle.canonical_labels()}
    bundle = write_bundle(model, info, args.bundle_dir)
    print(f"MISMATCH: {strategy}/{args.split} differs from the oracle "
          f"(equal={equal}, stable={witness is None}); reproducer in {bundle}", file=sys.stderr)
    return EXIT_MISMATCH


def cmd_gen(args) -> int:
    model = generate(_gen_spec(args))
    tra, lab = write_model(model)
    write_atomic({args.output + ".tra": tra, args.output + ".lab": lab})
    print(f"{model.num_states} states, {model.num_actions} choices, "
          f"{model.num_transitions} transitions")
    return 0


def cmd_bench(args) -> int:
    from . import plotting  # matplotlib is only needed here

    try:
        strategies = [CLI_ORDERINGS[s.strip()] for s in args.strategies.split(",")]
    except KeyError as e:
        raise CliError(f"unknown ordering {e.args[0]!r}; choose from {sorted(CLI_ORDERINGS)}") \
            from None
    backends = [b.strip() for b in args.backends.split(",")]
    if any(b not in ("sort", "hash") for b in backends):
        raise CliError("--backends takes a comma list of sort,hash")
    specs = [_gen_spec(args, args.seed + i) for i in range(args.models)]
    models = [(f"{s.family}-{s.num_states}-s{s.seed}", generate(s)) for s in specs]
    if "topological" in strategies:
        for name, m in models:
            _check_acyclic(m, "topological")
    report = compare_strategies(models, strategies, backends, workers=args.workers,
                                bundle_dir=os.path.join(args.out_dir, "disagreement"))
    out = args.out_dir
    write_atomic({os.path.join(out, "report.jsonl"): report.to_jsonl(),
                  os.path.join(out, "report.csv"): report.to_csv()})
    plotting.plot_spl_avg(report, os.path.join(out, "spl_avg.png"))
    plotting.plot_wall_time(report, os.path.join(out, "wall_time.png"))
    for st in strategies:
        print(f"{st:20s} mean SplAvg {report.mean(st):.3f}")
    if args.pipeline:
        name, m = models[0]
        timings = {}
        for st in strategies:
            timings[st] = t = pipeline_timing(m, st, backends[0], args.epsilon)
            print(f"{st:20s} direct {t.t_direct:.1f} ms, minimise {t.t_bisim:.1f} ms + "
                  f"VI {t.t_vi_quotient:.1f} ms, deviation {t.max_deviation:.2e}")
        rows = "".join(json.dumps({"strategy": k, **vars(v)}) + "\n" for k, v in timings.items())
        write_atomic({os.path.join(out, "pipeline.jsonl"): rows})
        plotting.plot_pipeline(timings, os.path.join(out, "pipeline.png"))
    return 0


COMMANDS = {"minimize": cmd_minimize, "check": cmd_check, "verify": cmd_verify,
            "gen": cmd_gen, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s: %(message)s")
    try:
        if hasattr(args, "hash_size"):
            _refine_config(args)  # reject bad flag combinations before any work
        return COMMANDS[args.command](args)
    except CliError as e:
        print(f"pbisim: error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
