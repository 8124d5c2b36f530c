import csv
import io
import json
import os

import pytest

from conftest import chain
from pbisim.bench import (REPORT_FIELDS, GenSpec, StrategyDisagreement, compare_strategies,
                          generate, pipeline_timing)
from pbisim.model import write_model
from pbisim.ordering import find_cycle, minimize
import pbisim.bench as bench


def test_chain_family_matches_fixture():
    assert generate(GenSpec("chain", 4)).structurally_equal(chain(4))


def test_generation_is_deterministic():
    a = generate(GenSpec("layered_dag", 500, seed=7))
    b = generate(GenSpec("layered_dag", 500, seed=7))
    assert write_model(a) == write_model(b)
    assert write_model(a) != write_model(generate(GenSpec("layered_dag", 500, seed=8)))


def test_layered_dag_is_acyclic():
    m = generate(GenSpec("layered_dag", 1000, seed=3))
    assert find_cycle(m) is None
    last = max(range(m.num_states))
    assert all(g > m.num_states // 2 for g in m.goal) and m.goal and last >= max(m.goal)


def test_cyclic_layered_has_back_edges():
    m = generate(GenSpec("cyclic_layered", 500, seed=1, back_edges=0.5))
    assert find_cycle(m) is not None


@pytest.mark.parametrize("family", ["random_mdp", "grid_dice", "cyclic_layered", "layered_dag"])
def test_families_produce_valid_models(family):
    m = generate(GenSpec(family, 120, seed=2))
    for a in range(m.num_actions):
        assert abs(sum(p for _, p in m.distribution(a)) - 1) < 1e-9


@pytest.mark.parametrize("bad", [
    dict(family="torus"), dict(num_states=0), dict(actions=(2, 1)), dict(fanout=(0, 2)),
    dict(granularity=0), dict(duplication=0), dict(back_edges=1.5), dict(goal_fraction=0),
    dict(layers=1),
])
def test_spec_validation(bad):
    kw = dict(family="layered_dag", num_states=50)
    kw.update(bad)
    with pytest.raises(ValueError):
        generate(GenSpec(**kw))


def test_duplication_lumps():
    m = generate(GenSpec("layered_dag", 2000, seed=4, duplication=5))
    p, _ = minimize(m)
    assert p.num_blocks <= 0.2 * m.num_states


def test_compare_strategies_rows_and_report():
    models = [("m0", generate(GenSpec("layered_dag", 300, seed=0)))]
    strategies = ["random", "size_heap", "size_hybrid", "topological_cyclic"]
    rep = compare_strategies(models, strategies)
    assert len(rep.rows) == 4
    assert len({r["final_num_blocks"] for r in rep.rows}) == 1
    for r in rep.rows:
        assert r["spl_avg"] * r["num_states"] == pytest.approx(r["splitter_mass"], abs=1e-9)
        assert r["splitter_mass"] / r["num_states"] == r["spl_avg"]
    lines = rep.to_jsonl().splitlines()
    assert [list(json.loads(x)) for x in lines] == [list(REPORT_FIELDS)] * 4
    rows = list(csv.DictReader(io.StringIO(rep.to_csv())))
    assert tuple(rows[0]) == REPORT_FIELDS and len(rows) == 4
    assert set(rep.by_strategy()) == set(strategies)


def test_compare_strategies_worker_pool():
    models = [(f"m{i}", generate(GenSpec("random_mdp", 40, seed=i))) for i in range(3)]
    a = compare_strategies(models, ["size_heap", "random"], workers=2)
    b = compare_strategies(models, ["size_heap", "random"], workers=1)
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_time"} for r in rows]
    assert strip(a.rows) == strip(b.rows)


def test_disagreement_writes_bundle(tmp_path, monkeypatch):
    real = bench._run_one

    def broken(args):
        row, labels = real(args)
        if row["strategy"] == "random":
            labels = list(range(len(labels)))
        return row, labels

    monkeypatch.setattr(bench, "_run_one", broken)
    models = [("m", chain(4)), ("n", generate(GenSpec("layered_dag", 60, seed=1, duplication=3)))]
    with pytest.raises(StrategyDisagreement) as e:
        compare_strategies(models, ["size_heap", "random"], bundle_dir=str(tmp_path / "b"))
    assert sorted(os.listdir(e.value.bundle)) == ["info.json", "model.lab", "model.tra"]


def test_pipeline_timing_chain():
    t = pipeline_timing(chain(50), "size_heap", repeats=1)
    assert t.max_deviation <= 1e-5
    assert t.quotient_states == 50
    assert t.t_total_bisim == t.t_bisim + t.t_vi_quotient


def test_pipeline_identity_reduction_time_comparable():
    m = chain(400)
    t = pipeline_timing(m, "size_heap", repeats=3)
    assert t.quotient_states == m.num_states
    assert t.t_vi_quotient <= 2 * t.t_direct + 5.0


def test_pipeline_heavily_lumpable():
    m = generate(GenSpec("layered_dag", 2000, seed=2, duplication=5))
    t = pipeline_timing(m, "size_heap", repeats=1)
    assert t.quotient_states <= 0.2 * t.num_states
    assert t.max_deviation <= 1e-5
