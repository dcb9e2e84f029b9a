"""Command-line interface for rationale_eval."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

from rationale_eval.config import config_hash, parse_overrides, write_lines_atomic
from rationale_eval.corpus import (
    EXPECTED_SPLITS,
    Schema,
    Setting,
    load_pairs,
    load_splits,
    validate_split_counts,
    write_pairs,
)
from rationale_eval.errors import InvalidConfig
from rationale_eval.generators import PerturbationConfig, TaskModelAdapter, generate_pairs
from rationale_eval.harness import (
    AnnotationScheme,
    ExperimentConfig,
    backend_for,
    correlate_with_human,
    evaluator_for,
    ingest_annotations,
    load_corpus,
    load_experiment_config,
    oracle_check,
    run_metric_comparison,
    run_sensitivity_sweep,
)
from rationale_eval.metrics import (
    aggregate_rev,
    evaluation_items,
    read_score_records,
    score_items,
    write_score_records,
)
from rationale_eval.reports import (
    ReportFormat,
    comparison_tables,
    correlation_table,
    emit_report,
    histogram_table,
    human_score_table,
    proxy_distribution_tables,
    sweep_histogram_tables,
    sweep_tables,
)
from rationale_eval.scorer import load_scorer, save_scorer
from rationale_eval.server import create_mcp_server
from rationale_eval.tools import resolve_synthetic_config


def _print_json(payload: Any) -> None:
    print(json.dumps(payload, ensure_ascii=True, indent=2))


def _formats(raw: str) -> list[ReportFormat]:
    return [ReportFormat(token.strip().lower()) for token in raw.split(",") if token.strip()]


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="Experiment config (JSON or TOML)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a config key, e.g. --set evaluator.alpha=0.5",
    )


def _parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Rationale evaluation metrics CLI")
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Log level for messages on stderr",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train-evaluator")
    _add_config_args(train)
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--out", required=True, help="Scorer checkpoint path (JSON)")

    baselines = sub.add_parser("build-baselines")
    _add_config_args(baselines)
    baselines.add_argument("--out", required=True)
    baselines.add_argument(
        "--all-labels", action="store_true", help="Build one baseline per candidate label"
    )

    gen = sub.add_parser("generate-pairs")
    _add_config_args(gen)
    gen.add_argument("--setting", required=True, help="XY*->R, X->YR or X->RY")
    gen.add_argument("--sigma2", type=float, default=0.0, help="Embedding noise variance")
    gen.add_argument("--out", required=True)

    score = sub.add_parser("score")
    _add_config_args(score)
    score.add_argument("--model", required=True, help="Scorer checkpoint from train-evaluator")
    score.add_argument("--pairs", required=True)
    score.add_argument("--out-dir", required=True)

    compare = sub.add_parser("compare-metrics")
    _add_config_args(compare)
    compare.add_argument("--format", default="csv,json", help="Comma list of csv, json, png")

    sweep = sub.add_parser("sensitivity")
    _add_config_args(sweep)
    sweep.add_argument("--format", default="csv,json")
    sweep.add_argument("--bins", type=int, default=20, help="REV histogram bins per noise level")

    corr = sub.add_parser("correlate")
    corr.add_argument("--annotations", required=True)
    corr.add_argument("--scheme", default=AnnotationScheme.LIKERT4_MAJORITY.value)
    corr.add_argument("--records", required=True, nargs="+", help="Score record JSONL files")
    corr.add_argument("--out-dir", default=None)

    report = sub.add_parser("report")
    report.add_argument("--records", required=True, nargs="+")
    report.add_argument("--out-dir", required=True)
    report.add_argument("--bins", type=int, default=20)
    report.add_argument("--format", default="csv,json")

    oracle = sub.add_parser("oracle-check")
    oracle.add_argument("--config", default="c_copy", help="Built-in name or synthetic JSON")
    oracle.add_argument("--n", type=int, default=100_000)
    oracle.add_argument("--seed", type=int, default=0)
    oracle.add_argument("--tolerance", type=float, default=None)

    splits = sub.add_parser("validate-splits")
    splits.add_argument("directory")
    splits.add_argument("--schema", required=True)
    splits.add_argument("--seed", type=int, default=0)

    mcp = sub.add_parser("mcp")
    mcp.add_argument("--server-name", default="rationale_eval")

    return parser.parse_args(argv)


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    return load_experiment_config(Path(args.config), parse_overrides(args.overrides))


def _train_evaluator(args: argparse.Namespace) -> dict[str, Any]:
    cfg = _load_config(args)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    corpus = load_corpus(cfg, seed)
    scorer = evaluator_for(cfg, corpus, seed)
    save_scorer(scorer, Path(args.out), cfg.evaluator.with_seed(seed))
    return {
        "path": str(args.out),
        "family": scorer.family_id,
        "seed": seed,
        "fingerprint": scorer.training_fingerprint,
    }


def _build_baselines(args: argparse.Namespace) -> dict[str, Any]:
    cfg = _load_config(args)
    corpus = load_corpus(cfg, cfg.seeds[0])
    lines = []
    for example in corpus.test:
        labels = example.candidates if args.all_labels else (example.gold_label,)
        for label in labels:
            lines.append(json.dumps(corpus.builder.build(example, label).to_dict()))
    write_lines_atomic(Path(args.out), lines)
    return {"path": str(args.out), "n": len(lines)}


def _generate_pairs(args: argparse.Namespace) -> dict[str, Any]:
    cfg = _load_config(args)
    corpus = load_corpus(cfg, cfg.seeds[0])
    adapter = TaskModelAdapter(Setting.parse(args.setting), backend_for(cfg, corpus), cfg.decode)
    perturbation = PerturbationConfig(
        args.sigma2, cfg.perturbation_seed, perturb_special_tokens=cfg.perturb_special_tokens
    )
    batch = generate_pairs(adapter, corpus.test, perturbation)
    write_pairs(Path(args.out), batch.pairs)
    return {
        "path": str(args.out),
        "n_pairs": len(batch.pairs),
        "n_excluded": batch.n_excluded,
        "accuracy": batch.accuracy,
    }


def _score(args: argparse.Namespace) -> dict[str, Any]:
    cfg = _load_config(args)
    corpus = load_corpus(cfg, cfg.seeds[0])
    scorer = load_scorer(Path(args.model))
    pairs = load_pairs(Path(args.pairs))
    items = evaluation_items(pairs, corpus.lookup(), corpus.builder)
    records = score_items(
        scorer, items, epsilon=cfg.epsilon, seed=cfg.seeds[0], max_workers=cfg.max_workers
    )
    out_dir = Path(args.out_dir)
    stem = Path(args.pairs).stem
    write_score_records(records, out_dir / f"{stem}.jsonl", out_dir / f"{stem}.csv")
    return aggregate_rev(records).to_dict()


def _compare(args: argparse.Namespace) -> dict[str, Any]:
    cfg = _load_config(args)
    result = run_metric_comparison(cfg)
    tables = comparison_tables(result, cfg.log_base) + proxy_distribution_tables(result)
    manifest = emit_report(tables, _formats(args.format), cfg.out_dir, cfg.hash)
    return {"result": result.to_dict(), "manifest": manifest}


def _sensitivity(args: argparse.Namespace) -> dict[str, Any]:
    cfg = _load_config(args)
    results = run_sensitivity_sweep(cfg)
    tables = sweep_tables(results) + sweep_histogram_tables(results, args.bins)
    manifest = emit_report(tables, _formats(args.format), cfg.out_dir, cfg.hash)
    return {"results": [r.to_dict() for r in results], "manifest": manifest}


def _correlate(args: argparse.Namespace) -> dict[str, Any]:
    annotations = ingest_annotations(Path(args.annotations), args.scheme)
    records = [r for path in args.records for r in read_score_records(Path(path))]
    report = correlate_with_human(annotations, records)
    payload: dict[str, Any] = {"report": report.to_dict()}
    if args.out_dir:
        run_hash = config_hash({"annotations": args.annotations, "records": args.records})
        payload["manifest"] = emit_report(
            [correlation_table(report), human_score_table(annotations)],
            [],
            Path(args.out_dir),
            run_hash,
        )
    return payload


def _report(args: argparse.Namespace) -> dict[str, Any]:
    tables = []
    for path in args.records:
        records = read_score_records(Path(path))
        tables.append(histogram_table(records, args.bins, name=f"{Path(path).stem}-histogram"))
    run_hash = config_hash({"records": args.records, "bins": args.bins})
    return emit_report(tables, _formats(args.format), Path(args.out_dir), run_hash)


def _validate_splits(args: argparse.Namespace) -> tuple[dict[str, Any], bool]:
    schema = Schema(args.schema.upper())
    expected = EXPECTED_SPLITS.get(schema)
    if expected is None:
        raise InvalidConfig(f"[splits] no published split sizes for {schema.value}")
    splits = load_splits(Path(args.directory), schema, args.seed)
    report = validate_split_counts(splits.stats, expected)
    return report.to_dict(), report.passed


def main(argv: list[str] | None = None) -> int:
    args = _parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    if args.command == "train-evaluator":
        _print_json(_train_evaluator(args))
        return 0
    if args.command == "build-baselines":
        _print_json(_build_baselines(args))
        return 0
    if args.command == "generate-pairs":
        _print_json(_generate_pairs(args))
        return 0
    if args.command == "score":
        _print_json(_score(args))
        return 0
    if args.command == "compare-metrics":
        _print_json(_compare(args))
        return 0
    if args.command == "sensitivity":
        _print_json(_sensitivity(args))
        return 0
    if args.command == "correlate":
        _print_json(_correlate(args))
        return 0
    if args.command == "report":
        _print_json(_report(args))
        return 0
    if args.command == "oracle-check":
        synthetic = resolve_synthetic_config(args.config)
        check = oracle_check(synthetic, n=args.n, seed=args.seed, tolerance=args.tolerance)
        _print_json(check.to_dict())
        return 0 if check.passed else 1
    if args.command == "validate-splits":
        payload, passed = _validate_splits(args)
        _print_json(payload)
        return 0 if passed else 1
    if args.command == "mcp":
        mcp = create_mcp_server(server_name=args.server_name)
        mcp.run()
        return 0
    return 1
