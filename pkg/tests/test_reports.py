from __future__ import annotations

import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import pytest

from rationale_eval.corpus import Setting
from rationale_eval.errors import EmptySet, InvalidConfig, IOFailure
from rationale_eval.harness import (
    CellResult,
    ComparisonResult,
    SweepResult,
    correlate_with_human,
    ingest_annotations,
    summarize_cells,
)
from rationale_eval.metrics import AggregateScore, Metric, read_score_records
from rationale_eval.reports import (
    PlotKind,
    ReportFormat,
    ReportTable,
    artifact_stem,
    comparison_tables,
    correctness_histogram_table,
    correlation_table,
    emit_report,
    histogram_table,
    human_score_table,
    proxy_distribution_tables,
    sweep_histogram_tables,
    sweep_tables,
)

ANNOTATIONS = Path(__file__).parent / "fixtures" / "annotations"
RUN_HASH = "0123456789abcdef0123"


def _comparison() -> ComparisonResult:
    cells = []
    for seed, shift in ((0, 0.0), (1, 0.2)):
        for setting, rev, las_value in ((Setting.GOLD, math.log(2), 0.3), (Setting.X_YR, 0.1, 0.4)):
            aggregates = {
                Metric.REV: AggregateScore(Metric.REV, rev + shift, 10),
                Metric.LAS: AggregateScore(Metric.LAS, las_value, 10),
            }
            cells.append(CellResult(seed, setting, aggregates, (), n_excluded=seed))
    settings = (Setting.GOLD, Setting.X_YR)
    metrics = (Metric.REV, Metric.LAS)
    seed_means, rankings = summarize_cells(cells, settings, metrics)
    return ComparisonResult(tuple(cells), seed_means, rankings, {0: "fp0", 1: "fp1"})


def _sweep() -> list[SweepResult]:
    return [
        SweepResult(0.0, 1.0, 3, 0, 3, 0, {Metric.REV: {"overall": 0.4, "correct": 0.4,
                                                         "incorrect": 0.0}},
                    {Metric.REV: 0.4}),
        SweepResult(20.0, 0.5, 2, 1, 1, 1, {Metric.REV: {"overall": 0.1, "correct": 0.3,
                                                          "incorrect": -0.1}},
                    {Metric.REV: 0.1}),
    ]


def test_comparison_tables_convert_information_metrics_only() -> None:
    cells_table, summary = comparison_tables(_comparison(), log_base="2")
    assert cells_table.columns == ("seed", "setting", "metric", "value", "n", "n_excluded")
    assert len(cells_table.rows) == 8
    first = cells_table.rows[0]
    assert first[:3] == (0, "Y*R*", "REV")
    assert first[3] == pytest.approx(1.0)
    las_rows = [row for row in summary.rows if row[1] == "LAS"]
    assert [row[2] for row in las_rows] == pytest.approx([0.3, 0.4])
    assert [row[3] for row in las_rows] == [2, 1]
    rev_rows = {row[0]: row for row in summary.rows if row[1] == "REV"}
    assert rev_rows["Y*R*"][3] == 1
    assert summary.plot is PlotKind.BAR
    assert summary.meta == {"log_base": "2"}


def test_sweep_tables() -> None:
    accuracy, metrics = sweep_tables(_sweep())
    assert accuracy.column("accuracy") == [1.0, 0.5]
    assert metrics.column("incorrect") == [0.0, -0.1]
    assert metrics.column("aggregate") == [0.4, 0.1]
    assert metrics.series == "metric"


def test_histogram_table_from_records() -> None:
    records = read_score_records(ANNOTATIONS / "records.jsonl")
    table = histogram_table(records, bins=5)
    assert sum(table.column("count")) == 12
    assert table.rows[0][0] == pytest.approx(-0.6)
    assert table.rows[-1][1] == pytest.approx(1.1)


def test_correlation_table_carries_coefficients() -> None:
    report = correlate_with_human(
        ingest_annotations(ANNOTATIONS / "likert.jsonl", "LIKERT4_MAJORITY"),
        read_score_records(ANNOTATIONS / "records.jsonl"),
    )
    table = correlation_table(report)
    assert table.column("setting") == ["Y*R*", "X->YR", "X->RY"]
    assert table.column("human_rank") == table.column("metric_rank") == [1, 2, 3]
    assert table.meta["rank_agreement"] is True


def test_emit_report_writes_artifacts_and_manifest(tmp_path: Path) -> None:
    tables = comparison_tables(_comparison())
    manifest = emit_report(tables, ["csv"], tmp_path, RUN_HASH)
    assert manifest["config_hash"] == RUN_HASH
    names = sorted(a["path"] for a in manifest["artifacts"])
    assert names == [
        "comparison-cells-0123456789ab.csv",
        "comparison-cells-0123456789ab.json",
        "comparison-summary-0123456789ab.csv",
        "comparison-summary-0123456789ab.json",
    ]
    saved = json.loads((tmp_path / "manifest-0123456789ab.json").read_text(encoding="utf-8"))
    assert saved == manifest
    csv_lines = (tmp_path / "comparison-cells-0123456789ab.csv").read_text().splitlines()
    assert csv_lines[0] == "seed,setting,metric,value,n,n_excluded"


def test_emit_report_is_byte_identical_across_runs(tmp_path: Path) -> None:
    tables = comparison_tables(_comparison())
    emit_report(tables, [], tmp_path / "a", RUN_HASH)
    emit_report(tables, [], tmp_path / "b", RUN_HASH)
    for path in sorted((tmp_path / "a").iterdir()):
        assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes()


def test_emit_report_plots_png(tmp_path: Path) -> None:
    pytest.importorskip("matplotlib")
    tables = [*comparison_tables(_comparison()), *sweep_tables(_sweep())]
    records = read_score_records(ANNOTATIONS / "records.jsonl")
    tables.append(histogram_table(records, bins=4))
    manifest = emit_report(tables, [ReportFormat.PNG], tmp_path, RUN_HASH)
    pngs = [a["path"] for a in manifest["artifacts"] if a["format"] == "png"]
    assert len(pngs) == 4
    assert artifact_stem(tables[0], RUN_HASH) + ".png" not in pngs
    for name in pngs:
        assert (tmp_path / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_emit_report_rejects_empty_tables(tmp_path: Path) -> None:
    with pytest.raises(EmptySet):
        emit_report([], [], tmp_path, RUN_HASH)
    with pytest.raises(EmptySet):
        emit_report([ReportTable("empty", ("a",), ())], [], tmp_path, RUN_HASH)


def test_emit_report_cleans_up_on_failure(tmp_path: Path) -> None:
    blocker = tmp_path / "taken"
    blocker.write_text("not a directory", encoding="utf-8")
    with pytest.raises(IOFailure):
        emit_report(comparison_tables(_comparison()), [], blocker, RUN_HASH)
    assert blocker.read_text(encoding="utf-8") == "not a directory"


def test_report_table_checks_row_width() -> None:
    with pytest.raises(InvalidConfig, match="row width"):
        ReportTable("bad", ("a", "b"), ((1,),))


def test_emit_report_removes_written_files_when_plotting_fails(
    tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    monkeypatch.setitem(sys.modules, "matplotlib", None)
    with pytest.raises(IOFailure):
        emit_report(sweep_tables(_sweep()), ["png"], tmp_path, RUN_HASH)
    assert list(tmp_path.iterdir()) == []


def test_emit_report_removes_temporary_files_on_unserializable_values(tmp_path: Path) -> None:
    good = ReportTable("good", ("a",), ((1,),))
    bad = ReportTable("bad", ("a",), ((object(),),))
    with pytest.raises(IOFailure):
        emit_report([good, bad], [], tmp_path, RUN_HASH)
    assert list(tmp_path.iterdir()) == []


def test_correctness_histogram_shares_bin_edges() -> None:
    records = read_score_records(ANNOTATIONS / "records.jsonl")
    correct = {r.example_id: r.rev > 0 for r in records}
    table = correctness_histogram_table(records, correct, bins=5)
    assert table.columns == ("group", "bin_left", "bin_right", "count")
    assert table.series == "group"
    rows = {group: [row for row in table.rows if row[0] == group]
            for group in ("correct", "incorrect")}
    assert [row[1:3] for row in rows["correct"]] == [row[1:3] for row in rows["incorrect"]]
    assert rows["correct"][0][1] == pytest.approx(-0.6)
    n_correct = sum(correct[r.example_id] for r in records)
    assert sum(row[3] for row in rows["correct"]) == n_correct
    assert sum(row[3] for row in rows["incorrect"]) == len(records) - n_correct
    with pytest.raises(EmptySet):
        correctness_histogram_table([], {})


def test_sweep_histograms_skip_points_without_pairs() -> None:
    records = tuple(read_score_records(ANNOTATIONS / "records.jsonl"))
    with_records = replace(_sweep()[0], records=records, correct={"a-0": True})
    tables = sweep_histogram_tables([with_records, _sweep()[1]], bins=3)
    assert [t.name for t in tables] == ["rev-by-correctness-s0"]
    counts = dict.fromkeys(("correct", "incorrect"), 0)
    for group, _, _, count in tables[0].rows:
        counts[group] += count
    assert counts == {"correct": 3, "incorrect": len(records) - 3}


def test_proxy_distribution_tables_count_differences_per_setting() -> None:
    base = _comparison()
    cells = tuple(
        replace(cell, diffs={Metric.LAS: (1, 0, 0, -1)} if cell.setting is Setting.GOLD else {})
        for cell in base.cells
    )
    tables = proxy_distribution_tables(replace(base, cells=cells))
    assert [t.name for t in tables] == ["las-distribution"]
    (table,) = tables
    assert table.rows == (("Y*R*", -1, 2, 0.25), ("Y*R*", 0, 4, 0.5), ("Y*R*", 1, 2, 0.25))
    assert table.plot is PlotKind.BAR
    assert proxy_distribution_tables(base) == []


def test_human_score_table_groups_by_setting() -> None:
    annotations = ingest_annotations(ANNOTATIONS / "likert.jsonl", "LIKERT4_MAJORITY")
    table = human_score_table(annotations)
    assert table.name == "human-scores"
    assert set(table.column("source")) == {"Y*R*", "X->YR", "X->RY"}
    for source in set(table.column("source")):
        fractions = [row[3] for row in table.rows if row[0] == source]
        assert math.fsum(fractions) == pytest.approx(1.0)
    assert sum(table.column("count")) == len(annotations)


def test_emit_report_plots_grouped_histograms(tmp_path: Path) -> None:
    pytest.importorskip("matplotlib")
    records = read_score_records(ANNOTATIONS / "records.jsonl")
    table = correctness_histogram_table(records, {r.example_id: r.rev > 0 for r in records}, 4)
    manifest = emit_report([table], ["png"], tmp_path, RUN_HASH)
    (png,) = [a["path"] for a in manifest["artifacts"] if a["format"] == "png"]
    assert (tmp_path / png).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
