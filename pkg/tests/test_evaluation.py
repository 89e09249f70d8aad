import json
import random
from dataclasses import replace
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from acrag.errors import ConfigurationError, InvalidArgument, LoadError, SweepConfigError
from acrag.evaluation import (
    RunRecord,
    ablation_table,
    compute_metrics,
    format_report,
    load_records,
    parse_grid,
    role_combinations,
    run_ablation,
    run_benchmark,
)
from acrag.parsing import UNPARSED, format_answer, parse_answer

from helpers import POPULATION_SCORES, population, population_config, toy_index

METRIC_SETS = json.loads((Path(__file__).parent / "fixtures" / "metric_sets.json").read_text())


# -- answer parsing ---------------------------------------------------------------

@pytest.mark.parametrize("text,kind,want", [
    ("### Answer: B", "multiple_choice", "B"),
    ("### Answer: b) Soft callus", "multiple_choice", "B"),
    ("### Answer: (C)", "multiple_choice", "C"),
    ("reasoning...\n### Answer: A\nmore\n### Answer: D", "multiple_choice", "D"),
    ("The answer is B", "multiple_choice", UNPARSED),
    ("### Answer: Because", "multiple_choice", UNPARSED),
    ("### Answer: yes", "yes_no", "yes"),
    ("### Answer: Maybe.", "yes_no", "maybe"),
    ("### Answer: No, because", "yes_no", "no"),
    ("### Answer: nothing", "yes_no", UNPARSED),
])
def test_parse_answer(text, kind, want):
    assert parse_answer(text, kind) == want


@pytest.mark.parametrize("kind,labels", [("multiple_choice", "ABCDE"), ("yes_no", ["yes", "no", "maybe"])])
def test_parse_format_round_trip(kind, labels):
    for label in labels:
        assert parse_answer(format_answer(label), kind) == label


@given(st.text(max_size=60), st.sampled_from(["multiple_choice", "yes_no"]))
def test_parse_is_idempotent(text, kind):
    label = parse_answer(text, kind)
    if label != UNPARSED:
        assert parse_answer(format_answer(label), kind) == label


# -- metrics ----------------------------------------------------------------------

def records_from(raw):
    return [RunRecord(**r) for r in raw]


def expected_value(v):
    return None if v is None else v[0] / v[1]


@pytest.mark.parametrize("fixture", METRIC_SETS, ids=lambda f: f["name"])
def test_metric_fixtures(fixture):
    m = compute_metrics(records_from(fixture["records"]))
    for name, want in fixture["expected"].items():
        got = getattr(m, name)
        if want is None:
            assert got is None
        else:
            assert abs(got - expected_value(want)) <= 1e-12


def test_empty_records_rejected():
    with pytest.raises(InvalidArgument):
        compute_metrics([])


def test_record_consistency_enforced():
    with pytest.raises(InvalidArgument):
        RunRecord("t", "A", "A", True, 0)


def random_records(rng: random.Random, n: int) -> list[RunRecord]:
    out = []
    for i in range(n):
        k = rng.choice([0, 0, 1, 2, 3])
        out.append(RunRecord(f"t{i}", rng.choice("ABCD"), rng.choice("ABCD") if rng.random() > 0.1 else UNPARSED,
                             k > 0, k))
    return out


@given(st.randoms(use_true_random=False), st.integers(1, 60))
def test_metrics_permutation_invariant(rng, n):
    records = random_records(rng, n)
    shuffled = records[:]
    rng.shuffle(shuffled)
    assert compute_metrics(records) == compute_metrics(shuffled)


@given(st.randoms(use_true_random=False), st.integers(1, 200))
def test_ra_and_dar_partition(rng, n):
    m = compute_metrics(random_records(rng, n))
    assert m.ra_rate + m.direct_answer_rate == 1.0
    assert 0 <= m.accuracy <= 1


def test_load_records_reports_line(tmp_path):
    path = tmp_path / "records.jsonl"
    path.write_text("{not json\n")
    with pytest.raises(LoadError, match="line 1"):
        load_records(path)


# -- benchmark --------------------------------------------------------------------

@pytest.fixture(scope="module")
def index():
    return toy_index()


def test_repeats_have_zero_std(index):
    result = run_benchmark(population(), population_config(), index, repeats=5)
    assert len(result.per_repeat) == 5
    assert all(v == 0.0 for v in result.std.values())
    assert result.mean["ra_rate"] == result.per_repeat[0].ra_rate


def test_single_repeat_identity(index):
    result = run_benchmark(population(), population_config(), index, repeats=1)
    for name, value in result.mean.items():
        assert value == getattr(result.report, name)
        assert result.std[name] == (None if value is None else 0.0)


def test_records_in_dataset_order(index):
    tasks = population()
    cfg = replace(population_config(), parallelism=8)
    result = run_benchmark(tasks, cfg, index, repeats=2)
    assert [r.task_id for r in result.records] == [t.id for t in tasks] * 2
    assert [r.repeat for r in result.records] == [0] * len(tasks) + [1] * len(tasks)


def test_single_round_pins_iters(index):
    cfg = population_config()
    multi = run_benchmark(population(), cfg, index).report
    single = run_benchmark(population(), replace(cfg, single_round=True), index).report
    assert multi.avg_iters_given_retrieval > 1.0
    assert single.avg_iters_given_retrieval == 1.0
    assert single.ra_rate == multi.ra_rate


def test_run_dir_contents(tmp_path, index):
    result = run_benchmark(population(), population_config(), index, out_dir=tmp_path)
    files = sorted(p.name for p in result.run_dir.iterdir())
    assert files == ["config.json", "records.jsonl", "report.json", "report.txt", "traces.jsonl"]
    assert load_records(result.run_dir / "records.jsonl") == result.records
    report = json.loads((result.run_dir / "report.json").read_text())
    assert report["mean"]["accuracy"] == pytest.approx(0.3)
    assert "RA Rate" in format_report(result)


def test_session_errors_become_unparsed(index):
    cfg = population_config()
    result = run_benchmark(population(), cfg, None)
    retrieving = [r for r in result.records if r.error]
    assert retrieving and all(r.predicted == UNPARSED for r in retrieving)
    assert result.errors == len(retrieving)


def test_dataset_path(tmp_path, index):
    path = tmp_path / "tasks.jsonl"
    path.write_text("".join(json.dumps(t.to_dict()) + "\n" for t in population()))
    assert run_benchmark(path, population_config(), index).report.n == len(POPULATION_SCORES)


# -- ablations --------------------------------------------------------------------

def test_role_combinations():
    cells = role_combinations("base", "tuned")
    assert [(c["detector"], c["resolver"]) for c in cells] == [
        ("base", "base"), ("base", "tuned"), ("tuned", "base"), ("tuned", "tuned")
    ]


def test_role_ablation(index):
    rows = run_ablation(role_combinations("base", "tuned"), population_config(), population(), index)
    acc = {r.cell["name"]: r.report.accuracy for r in rows}
    ra = {r.cell["name"]: r.report.ra_rate for r in rows}
    # the resolver decides correctness, the detector decides retrieval
    assert acc["D=base R=tuned"] == acc["D=tuned R=tuned"] == 1.0
    assert ra["D=base R=base"] == ra["D=base R=tuned"] == 0.6
    assert ra["D=tuned R=base"] == ra["D=tuned R=tuned"] == 0.4


def test_delta1_sweep_matches_direct_count(index):
    deltas = [-3.5, -2.5, -1.5, -0.8, -0.2]
    rows = run_ablation({"axes": {"delta1": deltas}}, population_config(), population(), index)
    for d, row in zip(deltas, rows):
        # retrieve iff score > delta1, so direct answers are the scores at or below it
        want = sum(1 for s in POPULATION_SCORES if s <= d) / len(POPULATION_SCORES)
        assert row.report.direct_answer_rate == pytest.approx(want, abs=1e-12)
    dar = [r.report.direct_answer_rate for r in rows]
    assert dar == sorted(dar)


def test_empty_grid(index):
    assert run_ablation([], population_config(), population(), index) == []


@pytest.mark.parametrize("grid", [
    [{"delta7": 1}],
    {"cells": [], "bogus": 1},
    [{"single_round": "yes"}],
    [{"detector": "missing"}],
    [{"delta1": "high"}],
])
def test_invalid_cells(grid, index):
    with pytest.raises(SweepConfigError):
        run_ablation(grid, population_config(), population(), index)


def test_invalid_cell_checked_before_any_run(index):
    calls = []

    def factory(cfg):
        calls.append(cfg)
        raise AssertionError("should not be reached")

    with pytest.raises(SweepConfigError):
        run_ablation([{"delta1": -1.0}, {"top_k": 0}], population_config(), population(), index,
                     moderator_factory=factory)
    assert calls == []


def test_grid_axes_product():
    cells = parse_grid({"cells": [{"name": "x"}], "axes": {"delta1": [-1, -2], "top_k": [1, 3]}})
    assert cells[0] == {"name": "x"}
    assert cells[1:] == [
        {"delta1": -1, "top_k": 1}, {"delta1": -1, "top_k": 3},
        {"delta1": -2, "top_k": 1}, {"delta1": -2, "top_k": 3},
    ]


def test_ablation_outputs(tmp_path, index):
    rows = run_ablation({"axes": {"delta1": [-3.0, -1.0, "-inf"]}}, population_config(), population(), index,
                        out_dir=tmp_path)
    (run_dir,) = tmp_path.iterdir()
    names = sorted(p.name for p in run_dir.iterdir())
    assert names == ["ablation.json", "ablation.tsv", "ablation.txt", "cells.png", "config.json",
                     "sweep_delta1.png"]
    assert (run_dir / "cells.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    tsv = (run_dir / "ablation.tsv").read_text().splitlines()
    assert tsv[0].split("\t")[:3] == ["delta1", "accuracy", "accuracy_std"]
    assert len(tsv) == 4
    table = ablation_table(rows)
    assert table[2]["delta1"] == "-inf" and table[2]["ra_rate"] == 1.0


def test_config_error_types():
    assert issubclass(SweepConfigError, ConfigurationError)


def test_polarity_cells_flip_the_sweep_direction(index):
    deltas = [-3.5, -2.5, -1.5, -0.8, -0.2]
    grid = {"axes": {"delta1": deltas, "pre_check_polarity": ["affirmative_means_stop"]}}
    rows = run_ablation(grid, population_config(), population(), index)
    for d, row in zip(deltas, rows):
        want = sum(1 for s in POPULATION_SCORES if s > d) / len(POPULATION_SCORES)
        assert row.report.direct_answer_rate == pytest.approx(want, abs=1e-12)
    dar = [r.report.direct_answer_rate for r in rows]
    assert dar == sorted(dar, reverse=True)


def test_unknown_polarity_rejected(index):
    with pytest.raises(SweepConfigError):
        run_ablation([{"pre_check_polarity": "sideways"}], population_config(), population(), index)
