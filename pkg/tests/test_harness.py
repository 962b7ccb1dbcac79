import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aipwlab.dgp import DgpSpec
from aipwlab.errors import InvalidInputError, InvalidParameterError
from aipwlab.harness import (
    CoverageReport,
    ExperimentConfig,
    boxplot_stats,
    coverage,
    format_summary,
    histogram,
    read_report,
    run_experiment,
    substream,
    write_report,
)

ORACLE = {"kind": "oracle"}


def small_config(**kw):
    base = dict(dgp=DgpSpec.example1(2), sample_sizes=(200, 400), replications=8,
                learner=ORACLE, master_seed=5)
    base.update(kw)
    return ExperimentConfig(**base)


# -- coverage -------------------------------------------------------------


def test_coverage_counts():
    assert coverage([(0, 2), (-1, 1)], 0.5) == 100.0
    assert coverage([(1, 2), (3, 4)], 0.5) == 0.0
    cis = [(0.0, 2.0)] * 167 + [(5.0, 6.0)] * 33
    assert coverage(cis, 1.0) == 83.5


def test_coverage_closed_endpoints_and_empty():
    assert coverage([(1.0, 2.0)], 1.0) == 100.0
    assert coverage([(1.0, 2.0)], 2.0) == 100.0
    with pytest.raises(InvalidInputError):
        coverage([], 0.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0, 5)), min_size=1, max_size=50), st.floats(-5, 5))
def test_coverage_matches_recount(pairs, truth):
    cis = [(c - w, c + w) for c, w in pairs]
    hits = sum(1 for lo, hi in cis if lo <= truth and truth <= hi)
    assert coverage(cis, truth) == 100.0 * hits / len(cis)


# -- histogram and boxplot ------------------------------------------------


def test_boxplot_linear_quartiles():
    b = boxplot_stats([1, 2, 3, 4])
    assert (b["median"], b["q1"], b["q3"]) == (2.5, 1.75, 3.25)
    assert (b["min"], b["max"]) == (1.0, 4.0)
    assert b["outliers"] == []


def test_boxplot_constant_and_outliers():
    b = boxplot_stats([0.3] * 5)
    assert {b[k] for k in ("min", "q1", "median", "q3", "max", "whisker_lo", "whisker_hi")} == {0.3}
    b = boxplot_stats([1, 2, 3, 4, 100])
    assert b["outliers"] == [100.0] and b["whisker_hi"] == 4.0


def test_boxplot_symmetric_median_zero():
    a = np.linspace(0.1, 2.0, 20)
    assert boxplot_stats(np.concatenate([-a, a]))["median"] == 0.0


def test_histogram_shapes():
    edges, counts = histogram([0.0, 1.0, 2.0, 3.0], 3)
    assert edges[0] == 0.0 and edges[-1] == 3.0 and len(edges) == 4
    assert counts == [1, 1, 2]
    edges, counts = histogram([0.7] * 9, 30)
    assert sum(1 for c in counts if c) == 1 and sum(counts) == 9
    edges, counts = histogram([1.0, np.nextafter(1.0, 2.0)], 30)  # range narrower than 30 ulps
    assert sum(counts) == 2 and np.all(np.diff(edges) > 0)
    with pytest.raises(InvalidInputError):
        histogram([], 5)
    with pytest.raises(InvalidParameterError):
        histogram([1.0], 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=200), st.integers(1, 40))
def test_histogram_counts_everything(xs, bins):
    edges, counts = histogram(xs, bins)
    assert sum(counts) == len(xs) and len(counts) == bins
    assert np.all(np.diff(edges) > 0)


# -- config ---------------------------------------------------------------


def test_config_validation():
    with pytest.raises(InvalidParameterError):
        small_config(replications=0)
    with pytest.raises(InvalidParameterError):
        small_config(sample_sizes=(0,))
    with pytest.raises(InvalidParameterError):
        small_config(k_folds=1)
    with pytest.raises(InvalidParameterError, match="valid keys"):
        ExperimentConfig.from_dict({"dgp": {"kind": "example1", "p": 2}, "sample_sizes": [10],
                                    "replications": 1, "learner": ORACLE, "reps": 3})
    with pytest.raises(InvalidParameterError, match="learner"):
        small_config(learner={"kind": "boost"})


def test_config_roundtrip():
    cfg = small_config(dimensions=(2, 3), clip=(0.05, 0.95), name="x")
    back = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg
    assert back.cells() == [(2, 200), (2, 400), (3, 200), (3, 400)]


# -- running --------------------------------------------------------------


def test_substreams_are_distinct_and_stable():
    a = substream(1, 2, 100, 0, 0).random(4)
    assert np.array_equal(a, substream(1, 2, 100, 0, 0).random(4))
    for other in [(1, 2, 100, 1, 0), (1, 2, 100, 0, 1), (1, 2, 200, 0, 0), (1, 3, 100, 0, 0), (2, 2, 100, 0, 0)]:
        assert not np.array_equal(a, substream(*other).random(4))


def test_single_replication_cell():
    report = run_experiment(small_config(replications=1, sample_sizes=(100,)))
    cell = report.cell(100)
    assert len(cell.estimates) == 1 and cell.coverage_pct in (0.0, 100.0)


def test_cells_and_invariants():
    report = run_experiment(small_config(dimensions=(2, 3)))
    assert [(c.p, c.n) for c in report.cells] == [(2, 200), (2, 400), (3, 200), (3, 400)]
    for c in report.cells:
        assert len(c.estimates) == len(c.errors) == len(c.covered) == 8
        assert c.coverage_pct == 100.0 * np.mean(c.covered)
        np.testing.assert_array_equal(np.asarray(c.estimates) - c.truth, c.errors)
        assert c.median_error == float(np.median(c.errors))
        assert c.replication_index == list(range(8))


def test_parallel_matches_serial_bytes():
    serial = run_experiment(small_config(parallelism=1))
    parallel = run_experiment(small_config(parallelism=2))
    assert serial.to_json() == parallel.to_json()
    assert "parallelism" not in serial.config


def test_nested_seeds_extend_shorter_runs():
    short = run_experiment(small_config(replications=4)).cell(200)
    long = run_experiment(small_config(replications=8)).cell(200)
    assert long.estimates[:4] == short.estimates
    assert long.ci_lo[:4] == short.ci_lo


def test_master_seed_changes_results():
    a = run_experiment(small_config(replications=2)).cell(200)
    b = run_experiment(small_config(replications=2, master_seed=6)).cell(200)
    assert a.estimates != b.estimates


def test_failures_are_recorded_not_dropped():
    cfg = small_config(sample_sizes=(6,), replications=10, learner={"kind": "glm"})
    cell = run_experiment(cfg).cell(6)
    assert cell.excluded > 0
    assert cell.excluded + len(cell.estimates) == 10
    assert all(f["reason"] for f in cell.failures)
    assert sorted(cell.replication_index + [f["replication"] for f in cell.failures]) == list(range(10))


def test_all_failures_give_null_aggregates(tmp_path):
    cfg = small_config(sample_sizes=(4,), replications=2, learner={"kind": "glm"}, dgp=DgpSpec.example1(5))
    report = run_experiment(cfg)
    cell = report.cell(4)
    assert cell.excluded == 2 and cell.coverage_pct is None
    write_report(report, tmp_path)
    assert read_report(tmp_path) == report
    assert "-" in format_summary(report)


# -- output files ---------------------------------------------------------


def test_write_and_read_report(tmp_path):
    report = run_experiment(small_config())
    paths = write_report(report, tmp_path)
    names = sorted(p.name for p in paths)
    assert names == sorted([
        "summary.csv", "errors_200_2.csv", "errors_400_2.csv", "histogram_200_2.csv",
        "histogram_400_2.csv", "report.json", "timing.json",
    ])
    assert read_report(tmp_path) == report
    with open(tmp_path / "summary.csv", newline="") as fh:
        rows = list(csv.DictReader(fh, strict=True))
    assert len(rows) == len(report.cells)
    assert list(rows[0]) == ["n", "p", "coverage_pct", "median_error", "mean_error", "sd_error", "excluded"]
    assert "runtime" not in (tmp_path / "report.json").read_text()
    assert json.loads((tmp_path / "timing.json").read_text())[0]["runtime_seconds"] >= 0


def test_aggregates_recomputable_from_error_files(tmp_path):
    report = run_experiment(small_config())
    write_report(report, tmp_path)
    with open(tmp_path / "summary.csv", newline="") as fh:
        summary = {(int(r["n"]), int(r["p"])): r for r in csv.DictReader(fh)}
    for c in report.cells:
        with open(tmp_path / f"errors_{c.n}_{c.p}.csv", newline="") as fh:
            rows = list(csv.DictReader(fh, strict=True))
        errors = np.array([float(r["error"]) for r in rows])
        cis = [(float(r["ci_lo"]), float(r["ci_hi"])) for r in rows]
        recount = 100.0 * sum(lo <= c.truth <= hi for lo, hi in cis) / len(cis)
        row = summary[(c.n, c.p)]
        assert float(row["coverage_pct"]) == recount == coverage(cis, c.truth)
        assert recount == 100.0 * np.mean([int(r["covered"]) for r in rows])
        assert float(row["median_error"]) == float(np.median(errors))
        assert float(row["mean_error"]) == float(errors.mean())
        assert float(row["sd_error"]) == float(errors.std(ddof=1))
        with open(tmp_path / f"histogram_{c.n}_{c.p}.csv", newline="") as fh:
            hist = list(csv.DictReader(fh))
        assert sum(int(h["count"]) for h in hist) == len(errors)


def test_report_json_roundtrip_is_exact():
    report = run_experiment(small_config(replications=3))
    assert CoverageReport.from_json(report.to_json()).to_json() == report.to_json()


def test_format_summary_lists_cells():
    report = run_experiment(small_config(replications=2))
    text = format_summary(report)
    assert len(text.splitlines()) == 1 + len(report.cells)
