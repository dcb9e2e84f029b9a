"""Report tables rendered to CSV, JSON and optional PNG plots, with a manifest."""

from __future__ import annotations

import csv
import io
import logging
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any

from rationale_eval.config import write_json_atomic, write_lines_atomic
from rationale_eval.errors import EmptySet, InvalidConfig, IOFailure
from rationale_eval.harness import (
    ComparisonResult,
    CorrelationReport,
    HumanAnnotationRecord,
    SweepResult,
)
from rationale_eval.metrics import Metric, ScoreRecord, rev_histogram, to_log_base

logger = logging.getLogger(__name__)


class ReportFormat(StrEnum):
    CSV = "csv"
    JSON = "json"
    PNG = "png"


class PlotKind(StrEnum):
    BAR = "bar"
    CURVE = "curve"
    HISTOGRAM = "histogram"


@dataclass(frozen=True)
class ReportTable:
    """A named table; `plot` says how to draw it when PNG output is requested.

    Bar plots group `y` by `x` with one bar per `series` value, curves draw `y` against `x`
    per `series`, and histograms use `bin_left`/`bin_right`/`count` columns.
    """

    name: str
    columns: tuple[str, ...]
    rows: tuple[tuple[Any, ...], ...]
    plot: PlotKind | None = None
    x: str | None = None
    y: tuple[str, ...] = ()
    series: str | None = None
    title: str = ""
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for row in self.rows:
            if len(row) != len(self.columns):
                raise InvalidConfig(
                    f"[report] {self.name}: row width {len(row)} != {len(self.columns)} columns"
                )

    def column(self, name: str) -> list[Any]:
        idx = self.columns.index(name)
        return [row[idx] for row in self.rows]

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "columns": list(self.columns),
            "rows": [list(row) for row in self.rows],
            "meta": self.meta,
        }

    def csv_lines(self) -> list[str]:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(self.columns)
        writer.writerows(self.rows)
        return buffer.getvalue().splitlines()


def artifact_stem(table: ReportTable, config_hash: str) -> str:
    return f"{table.name}-{config_hash[:12]}"


def _plot(table: ReportTable, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    try:
        if table.plot is PlotKind.HISTOGRAM:
            for label, rows in _series(table).items():
                lefts = [row["bin_left"] for row in rows]
                widths = [row["bin_right"] - row["bin_left"] for row in rows]
                ax.bar(
                    lefts, [row["count"] for row in rows], width=widths, align="edge",
                    edgecolor="black", alpha=0.5 if table.series else 1.0, label=label or None,
                )
            if table.series:
                ax.legend(fontsize="small")
            ax.set_xlabel("REV")
            ax.set_ylabel("count")
        elif table.plot is PlotKind.CURVE:
            assert table.x is not None
            groups = _series(table)
            for label, rows in groups.items():
                xs = [row[table.x] for row in rows]
                for y in table.y:
                    name = f"{label} {y}".strip()
                    ax.plot(xs, [row[y] for row in rows], marker="o", label=name)
            ax.set_xlabel(table.x)
            ax.grid(True)
            ax.legend(fontsize="small")
        else:
            assert table.x is not None and table.y
            groups = _series(table)
            categories = list(dict.fromkeys(table.column(table.x)))
            width = 0.8 / max(len(groups), 1)
            for offset, (label, rows) in enumerate(groups.items()):
                values = {row[table.x]: row[table.y[0]] for row in rows}
                ax.bar(
                    [i + offset * width for i in range(len(categories))],
                    [values.get(c, 0.0) for c in categories],
                    width=width,
                    label=label or table.y[0],
                )
            ax.set_xticks([i + 0.4 - width / 2 for i in range(len(categories))])
            ax.set_xticklabels([str(c) for c in categories])
            ax.set_ylabel(table.y[0])
            ax.legend(fontsize="small")
        ax.set_title(table.title or table.name)
        fig.tight_layout()
        fig.savefig(path, format="png", metadata={"Software": None})
    finally:
        plt.close(fig)


def _series(table: ReportTable) -> dict[str, list[dict[str, Any]]]:
    groups: dict[str, list[dict[str, Any]]] = {}
    for row in table.rows:
        record = dict(zip(table.columns, row))
        key = str(record[table.series]) if table.series else ""
        groups.setdefault(key, []).append(record)
    return groups


def emit_report(
    tables: Sequence[ReportTable],
    formats: Iterable[ReportFormat | str],
    out_dir: Path,
    config_hash: str,
) -> dict[str, Any]:
    """Write every table; returns the manifest, which is written last.

    CSV and JSON are always written. On any write failure the files written so far are
    removed and `IOFailure` is raised.
    """
    if not tables or any(not table.rows for table in tables):
        raise EmptySet("[report] nothing to report: every table needs at least one row")
    requested = {ReportFormat(str(f).lower()) for f in formats} | {
        ReportFormat.CSV,
        ReportFormat.JSON,
    }
    out_dir = Path(out_dir)
    # Paths are recorded before writing so a half-written file is removed too.
    written: list[Path] = []
    artifacts: list[dict[str, str]] = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for table in tables:
            stem = artifact_stem(table, config_hash)
            csv_path = out_dir / f"{stem}.csv"
            written.append(csv_path)
            write_lines_atomic(csv_path, table.csv_lines())
            json_path = out_dir / f"{stem}.json"
            written.append(json_path)
            write_json_atomic(json_path, table.to_dict())
            artifacts.extend(
                [
                    {"table": table.name, "format": "csv", "path": csv_path.name},
                    {"table": table.name, "format": "json", "path": json_path.name},
                ]
            )
            if ReportFormat.PNG in requested and table.plot is not None:
                png_path = out_dir / f"{stem}.png"
                written.append(png_path)
                _plot(table, png_path)
                artifacts.append({"table": table.name, "format": "png", "path": png_path.name})
        manifest = {"config_hash": config_hash, "artifacts": artifacts}
        manifest_path = out_dir / f"manifest-{config_hash[:12]}.json"
        written.append(manifest_path)
        write_json_atomic(manifest_path, manifest)
    except Exception as exc:
        for path in written:
            path.unlink(missing_ok=True)
            path.with_suffix(path.suffix + ".tmp").unlink(missing_ok=True)
        raise IOFailure(f"[report] could not write report to {out_dir}: {exc!r}") from exc
    logger.info("wrote %d report artifacts to %s", len(artifacts), out_dir)
    return manifest


def comparison_tables(result: ComparisonResult, log_base: str = "e") -> list[ReportTable]:
    """Per-cell aggregates plus the seed-averaged table (one row per setting and metric)."""
    cell_rows = []
    for cell in result.cells:
        for metric, aggregate in cell.aggregates.items():
            cell_rows.append(
                (
                    cell.seed,
                    cell.setting.value,
                    metric.value,
                    _report_value(metric, aggregate.value, log_base),
                    aggregate.n,
                    cell.n_excluded,
                )
            )
    summary_rows = []
    for setting, means in result.seed_means.items():
        for metric, value in means.items():
            rank = result.rankings[metric].index(setting) + 1
            summary_rows.append(
                (setting.value, metric.value, _report_value(metric, value, log_base), rank)
            )
    return [
        ReportTable(
            "comparison-cells",
            ("seed", "setting", "metric", "value", "n", "n_excluded"),
            tuple(cell_rows),
        ),
        ReportTable(
            "comparison-summary",
            ("setting", "metric", "mean", "rank"),
            tuple(summary_rows),
            plot=PlotKind.BAR,
            x="setting",
            y=("mean",),
            series="metric",
            title="Seed-averaged scores per pair setting",
            meta={"log_base": log_base},
        ),
    ]


def _report_value(metric: Metric, value: float, log_base: str) -> float:
    if metric in (Metric.REV, Metric.CVI):
        return to_log_base(value, log_base)
    return value


def sweep_tables(results: Sequence[SweepResult]) -> list[ReportTable]:
    accuracy_rows = tuple(
        (r.sigma_squared, r.accuracy, r.n_pairs, r.n_excluded) for r in results
    )
    metric_rows = []
    for result in results:
        for metric, split in result.means.items():
            metric_rows.append(
                (
                    result.sigma_squared,
                    metric.value,
                    split["overall"],
                    split["correct"],
                    split["incorrect"],
                    result.n_correct,
                    result.n_incorrect,
                    result.aggregates.get(metric, split["overall"]),
                )
            )
    return [
        ReportTable(
            "sweep-accuracy",
            ("sigma_squared", "accuracy", "n_pairs", "n_excluded"),
            accuracy_rows,
            plot=PlotKind.CURVE,
            x="sigma_squared",
            y=("accuracy",),
            title="Task-model accuracy under embedding noise",
        ),
        ReportTable(
            "sweep-metrics",
            (
                "sigma_squared", "metric", "overall", "correct", "incorrect",
                "n_correct", "n_incorrect", "aggregate",
            ),
            tuple(metric_rows),
            plot=PlotKind.CURVE,
            x="sigma_squared",
            y=("overall", "correct", "incorrect"),
            series="metric",
            title="Metric means under embedding noise",
        ),
    ]


def histogram_table(
    records: Sequence[ScoreRecord], bins: int = 20, name: str = "rev-histogram"
) -> ReportTable:
    counts, edges = rev_histogram(records, bins)
    rows = tuple((edges[i], edges[i + 1], counts[i]) for i in range(len(counts)))
    return ReportTable(
        name,
        ("bin_left", "bin_right", "count"),
        rows,
        plot=PlotKind.HISTOGRAM,
        title="Distribution of pointwise REV",
    )


def correctness_histogram_table(
    records: Sequence[ScoreRecord],
    correct: Mapping[str, bool],
    bins: int = 20,
    name: str = "rev-by-correctness",
) -> ReportTable:
    """REV histograms of correct and incorrect predictions over shared bin edges."""
    _, edges = rev_histogram(records, bins)
    rows = []
    for group, wanted in (("correct", True), ("incorrect", False)):
        subset = [r for r in records if bool(correct.get(r.example_id, False)) is wanted]
        counts = rev_histogram(subset, bins, (edges[0], edges[-1]))[0] if subset else [0] * bins
        rows.extend((group, edges[i], edges[i + 1], counts[i]) for i in range(bins))
    return ReportTable(
        name,
        ("group", "bin_left", "bin_right", "count"),
        tuple(rows),
        plot=PlotKind.HISTOGRAM,
        series="group",
        title="REV of correct and incorrect predictions",
    )


def sweep_histogram_tables(results: Sequence[SweepResult], bins: int = 20) -> list[ReportTable]:
    return [
        correctness_histogram_table(
            result.records,
            result.correct,
            bins,
            name=f"rev-by-correctness-s{result.sigma_squared:g}",
        )
        for result in results
        if result.records
    ]


def value_distribution_table(
    name: str, groups: Mapping[str, Sequence[float]], title: str = ""
) -> ReportTable:
    """Count and fraction of each distinct value, per group."""
    rows = []
    for source, values in groups.items():
        counts = Counter(values)
        for value in sorted(counts):
            rows.append((source, value, counts[value], counts[value] / len(values)))
    return ReportTable(
        name,
        ("source", "value", "count", "fraction"),
        tuple(rows),
        plot=PlotKind.BAR,
        x="value",
        y=("fraction",),
        series="source",
        title=title or name,
    )


def proxy_distribution_tables(result: ComparisonResult) -> list[ReportTable]:
    """Distribution of per-example LAS and RQ proxy differences for each pair setting."""
    tables = []
    for metric in (Metric.LAS, Metric.RQ):
        groups: dict[str, list[float]] = {}
        for cell in result.cells:
            if cell.diffs.get(metric):
                groups.setdefault(cell.setting.value, []).extend(cell.diffs[metric])
        if groups:
            tables.append(
                value_distribution_table(
                    f"{metric.value.lower()}-distribution",
                    groups,
                    f"{metric.value} proxy differences per pair setting",
                )
            )
    return tables


def human_score_table(annotations: Sequence[HumanAnnotationRecord]) -> ReportTable:
    groups: dict[str, list[float]] = {}
    for record in annotations:
        source = record.setting.value if record.setting is not None else "all"
        groups.setdefault(source, []).append(record.mapped_score)
    return value_distribution_table("human-scores", groups, "Mapped human scores")


def correlation_table(report: CorrelationReport) -> ReportTable:
    rows = tuple(
        (
            setting.value,
            values["human"],
            values["metric"],
            int(values["n"]),
            report.human_ranking.index(setting) + 1,
            report.metric_ranking.index(setting) + 1,
        )
        for setting, values in report.per_setting.items()
    )
    return ReportTable(
        "human-correlation",
        ("setting", "human_mean", "metric_mean", "n", "human_rank", "metric_rank"),
        rows,
        meta={
            "spearman": report.spearman,
            "kendall": report.kendall,
            "rank_agreement": report.rank_agreement,
            "human_support_rate": report.human_support_rate,
            "metric_support_rate": report.metric_support_rate,
        },
    )
