"""Experiment orchestration: metric comparison, sensitivity sweeps, human-judgment correlation."""

from __future__ import annotations

import asyncio
import json
import logging
import math
from collections import defaultdict
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
from scipy.stats import kendalltau, spearmanr

from rationale_eval.baselines import (
    BaselineBuilder,
    CachedConverter,
    CommandConverter,
    DeclarativeConverter,
    GoldenConverter,
    RuleConverter,
)
from rationale_eval.config import (
    apply_overrides,
    config_hash,
    load_config_file,
)
from rationale_eval.corpus import (
    Example,
    RationaleLabelPair,
    Schema,
    Setting,
    load_dataset,
    load_pairs,
)
from rationale_eval.errors import (
    EmptySet,
    HookUnsupported,
    InvalidConfig,
    JoinFailure,
    SchemaViolation,
    WrongAnnotatorCount,
)
from rationale_eval.generators import (
    NOISE_GRID,
    Backend,
    DecodeConfig,
    PerturbationConfig,
    StubBackend,
    TaskModelAdapter,
    backend_from_config,
    generate_pairs,
)
from rationale_eval.metrics import (
    DEFAULT_EPSILON,
    AggregateScore,
    Metric,
    ScoreRecord,
    aggregate_rev,
    cvi,
    evaluation_items,
    las,
    rq,
    score_items,
    simulate_las_flags,
    simulate_rq_flags,
    split_by_correctness,
    write_score_records,
)
from rationale_eval.scorer import (
    ConditionalLabelScorer,
    FamilyConfig,
    build_training_records,
    train_evaluator,
)
from rationale_eval.synth import (
    ExactBayesScorer,
    SyntheticConfig,
    degradation_suite,
    exact_cmi,
    exact_cmi_from_entropies,
    load_synthetic_config,
    sample_synthetic,
    synthetic_examples,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")

DEFAULT_DEGRADATION = {
    Setting.GOLD: 0.0,
    Setting.XY_R: 0.25,
    Setting.X_YR: 0.5,
    Setting.X_RY: 0.75,
}

_CONFIG_KEYS = frozenset(
    {
        "name", "data", "synthetic", "evaluator", "proxy", "seeds", "settings", "metrics",
        "perturbation_grid", "perturbation_seed", "perturb_special_tokens", "sweep_setting",
        "backend", "decode", "converter", "pairs", "epsilon", "log_base", "max_workers",
        "concurrent", "out_dir",
    }
)


def _resolve(base_dir: Path | None, value: str | Path | None) -> Path | None:
    if value is None:
        return None
    path = Path(value)
    if base_dir is not None and not path.is_absolute():
        return base_dir / path
    return path


def _converter_section(section: Mapping[str, Any], base_dir: Path | None) -> dict[str, Any]:
    resolved = dict(section)
    for key in ("path", "cache"):
        if resolved.get(key):
            resolved[key] = str(_resolve(base_dir, resolved[key]))
    return resolved


@dataclass(frozen=True)
class DataConfig:
    schema: Schema
    train: Path
    test: Path


@dataclass(frozen=True)
class SyntheticRunConfig:
    config: Path
    n_train: int = 5000
    n_eval: int = 2000
    oracle: bool = False
    weights: dict[Setting, float] = field(default_factory=lambda: dict(DEFAULT_DEGRADATION))


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seeds: tuple[int, ...]
    settings: tuple[Setting, ...]
    metrics: tuple[Metric, ...]
    evaluator: FamilyConfig
    proxy: FamilyConfig
    data: DataConfig | None = None
    synthetic: SyntheticRunConfig | None = None
    perturbation_grid: tuple[float, ...] = NOISE_GRID
    perturbation_seed: int = 0
    perturb_special_tokens: bool = True
    sweep_setting: Setting = Setting.X_YR
    backend: dict[str, Any] = field(default_factory=lambda: {"kind": "stub"})
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    converter: dict[str, Any] = field(default_factory=lambda: {"kind": "rule"})
    pairs: dict[Setting, Path] = field(default_factory=dict)
    epsilon: float = DEFAULT_EPSILON
    log_base: str = "e"
    max_workers: int = 1
    concurrent: bool = False
    out_dir: Path = Path("runs")
    raw: dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.seeds:
            raise InvalidConfig("[config] seed list must be non-empty")
        if any(v < 0 or not math.isfinite(v) for v in self.perturbation_grid):
            raise InvalidConfig(
                f"[config] perturbation grid values must be >= 0: {self.perturbation_grid}"
            )
        if not self.settings:
            raise InvalidConfig("[config] at least one pair setting is required")
        if (self.data is None) == (self.synthetic is None):
            raise InvalidConfig("[config] exactly one of 'data' and 'synthetic' is required")

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    @classmethod
    def from_mapping(
        cls, data: Mapping[str, Any], base_dir: Path | None = None
    ) -> ExperimentConfig:
        unknown = set(data) - _CONFIG_KEYS
        if unknown:
            raise InvalidConfig(f"[config] unknown experiment keys: {sorted(unknown)}")
        try:
            data_cfg = None
            if data.get("data") is not None:
                section = data["data"]
                data_cfg = DataConfig(
                    Schema(str(section["schema"]).upper()),
                    _resolve(base_dir, section["train"]),
                    _resolve(base_dir, section["test"]),
                )
            synthetic_cfg = None
            if data.get("synthetic") is not None:
                section = dict(data["synthetic"])
                weights = dict(DEFAULT_DEGRADATION)
                for key, value in section.pop("weights", {}).items():
                    weights[Setting.parse(key)] = float(value)
                synthetic_cfg = SyntheticRunConfig(
                    config=_resolve(base_dir, section.pop("config")),
                    weights=weights,
                    **section,
                )
            evaluator = FamilyConfig.from_mapping(dict(data.get("evaluator", {})))
            proxy = (
                FamilyConfig.from_mapping(dict(data["proxy"])) if "proxy" in data else evaluator
            )
            return cls(
                name=str(data.get("name", "experiment")),
                seeds=tuple(int(s) for s in data.get("seeds", [0])),
                settings=tuple(Setting.parse(s) for s in data.get("settings", ["Y*R*"])),
                metrics=tuple(Metric(str(m).upper()) for m in data.get("metrics", ["REV"])),
                evaluator=evaluator,
                proxy=proxy,
                data=data_cfg,
                synthetic=synthetic_cfg,
                perturbation_grid=tuple(
                    float(v) for v in data.get("perturbation_grid", NOISE_GRID)
                ),
                perturbation_seed=int(data.get("perturbation_seed", 0)),
                perturb_special_tokens=bool(data.get("perturb_special_tokens", True)),
                sweep_setting=Setting.parse(data.get("sweep_setting", "X->YR")),
                backend=dict(data.get("backend", {"kind": "stub"})),
                decode=DecodeConfig(**data.get("decode", {})),
                converter=_converter_section(data.get("converter", {"kind": "rule"}), base_dir),
                pairs={
                    Setting.parse(k): _resolve(base_dir, v)
                    for k, v in data.get("pairs", {}).items()
                },
                epsilon=float(data.get("epsilon", DEFAULT_EPSILON)),
                log_base=str(data.get("log_base", "e")),
                max_workers=int(data.get("max_workers", 1)),
                concurrent=bool(data.get("concurrent", False)),
                out_dir=_resolve(base_dir, data.get("out_dir", "runs")),
                raw=json.loads(json.dumps(dict(data), default=str)),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidConfig(f"[config] malformed experiment config: {exc!r}") from exc


def load_experiment_config(
    path: Path, overrides: Mapping[str, Any] | None = None
) -> ExperimentConfig:
    path = Path(path)
    data = load_config_file(path)
    if overrides:
        data = apply_overrides(data, overrides)
    return ExperimentConfig.from_mapping(data, base_dir=path.parent)


def converter_from_config(data: Mapping[str, Any]) -> DeclarativeConverter:
    kind = data.get("kind", "rule")
    if kind == "rule":
        return RuleConverter()
    if kind == "command":
        converter: DeclarativeConverter = CommandConverter(data["command"], data.get("timeout"))
    elif kind == "golden":
        converter = GoldenConverter(Path(data["path"]))
    else:
        raise InvalidConfig(f"[config] unknown converter kind {kind!r}")
    cache = data.get("cache")
    return CachedConverter(converter, Path(cache)) if cache else converter


def baseline_builder_from_config(cfg: ExperimentConfig) -> BaselineBuilder:
    if cfg.synthetic is not None:
        return BaselineBuilder.for_synthetic()
    return BaselineBuilder(
        converter_from_config(cfg.converter), fallback=bool(cfg.converter.get("fallback", True))
    )


@dataclass(frozen=True)
class Corpus:
    train: tuple[Example, ...]
    test: tuple[Example, ...]
    builder: BaselineBuilder
    external_pairs: tuple[RationaleLabelPair, ...] = ()
    synthetic: SyntheticConfig | None = None

    def lookup(self) -> dict[str, Example]:
        return {example.id: example for example in (*self.train, *self.test)}


def load_corpus(cfg: ExperimentConfig, seed: int) -> Corpus:
    builder = baseline_builder_from_config(cfg)
    if cfg.synthetic is not None:
        base = load_synthetic_config(cfg.synthetic.config)
        train, _ = synthetic_examples(
            sample_synthetic(base, cfg.synthetic.n_train, seed), base, id_prefix="train"
        )
        test, _ = synthetic_examples(
            sample_synthetic(base, cfg.synthetic.n_eval, seed + 1_000_003), base, id_prefix="test"
        )
        return Corpus(tuple(train), tuple(test), builder, synthetic=base)
    assert cfg.data is not None
    train_set = load_dataset(cfg.data.train, cfg.data.schema)
    test_set = load_dataset(cfg.data.test, cfg.data.schema)
    return Corpus(tuple(train_set), tuple(test_set), builder, external_pairs=test_set.pairs)


def evaluator_for(cfg: ExperimentConfig, corpus: Corpus, seed: int) -> ConditionalLabelScorer:
    if corpus.synthetic is not None and cfg.synthetic is not None and cfg.synthetic.oracle:
        return ExactBayesScorer(corpus.synthetic)
    records = build_training_records(corpus.train, corpus.builder)
    return train_evaluator(records, cfg.evaluator.with_seed(seed))


def stub_answer_key(examples: Sequence[Example]) -> dict[str, dict[str, str]]:
    """Gold answer key keyed the way the stub backend reads prompts."""
    key: dict[str, dict[str, str]] = {}
    for example in examples:
        question = getattr(example.input, "question", None)
        if question is None:
            question = f"{example.input.premise} {example.input.hypothesis}"
        entry = {"label": example.gold_label}
        if example.gold_rationale:
            entry["rationale"] = example.gold_rationale
        key[question] = entry
    return key


def backend_for(cfg: ExperimentConfig, corpus: Corpus) -> Backend:
    data = dict(cfg.backend)
    if data.get("kind", "stub") == "stub" and data.get("answer_key", "gold") == "gold":
        data["answer_key"] = stub_answer_key([*corpus.train, *corpus.test])
        return StubBackend.from_config(data)
    return backend_from_config(data)


def pairs_for_setting(
    cfg: ExperimentConfig, corpus: Corpus, setting: Setting, seed: int
) -> tuple[list[RationaleLabelPair], dict[str, Example], int]:
    """Pairs to evaluate for one setting, the examples they refer to, and the excluded count."""
    examples = {example.id: example for example in corpus.test}
    if setting in cfg.pairs:
        return load_pairs(cfg.pairs[setting]), examples, 0
    if setting is Setting.GOLD:
        pairs = [
            RationaleLabelPair(e.id, e.gold_label, e.gold_rationale, Setting.GOLD)
            for e in corpus.test
            if e.gold_rationale
        ]
        return pairs, examples, 0
    if setting is Setting.VACUOUS:
        pairs = [
            RationaleLabelPair(
                e.id, e.gold_label, corpus.builder.build(e, e.gold_label).text, Setting.VACUOUS
            )
            for e in corpus.test
        ]
        return pairs, examples, 0
    if setting is Setting.EXTERNAL:
        if not corpus.external_pairs:
            raise InvalidConfig("[harness] EXTERNAL setting needs a pairs file or generic triples")
        return list(corpus.external_pairs), examples, 0
    if corpus.synthetic is not None and cfg.synthetic is not None:
        weight = cfg.synthetic.weights.get(setting)
        if weight is None:
            raise InvalidConfig(f"[harness] no degradation weight for {setting.value}")
        degraded = degradation_suite(corpus.synthetic, [weight])[0]
        synth_examples, pairs = synthetic_examples(
            sample_synthetic(degraded, cfg.synthetic.n_eval, seed + 7_919),
            corpus.synthetic,
            setting=setting,
            id_prefix=f"{setting.name.lower()}",
        )
        return pairs, {e.id: e for e in synth_examples}, 0
    adapter = TaskModelAdapter(setting, backend_for(cfg, corpus), cfg.decode)
    batch = generate_pairs(adapter, corpus.test)
    return list(batch.pairs), examples, batch.n_excluded


def proxy_training_pairs(
    cfg: ExperimentConfig,
    corpus: Corpus,
    setting: Setting,
    seed: int,
    perturbation: PerturbationConfig | None = None,
    backend: Backend | None = None,
) -> tuple[list[RationaleLabelPair], dict[str, Example]]:
    """Training-split pairs of one setting, for fitting the LAS and RQ proxies.

    Pairs loaded from a file or given as EXTERNAL have no training-split counterpart, so
    their proxies are fit on the gold training rationales.
    """
    train = {example.id: example for example in corpus.train}
    gold = [
        RationaleLabelPair(e.id, e.gold_label, e.gold_rationale, Setting.GOLD)
        for e in corpus.train
        if e.gold_rationale
    ]
    if setting is Setting.GOLD:
        return gold, train
    if setting in cfg.pairs or setting is Setting.EXTERNAL:
        logger.info("%s proxies are fit on gold training rationales", setting.value)
        return gold, train
    if setting is Setting.VACUOUS:
        pairs = [
            RationaleLabelPair(
                e.id, e.gold_label, corpus.builder.build(e, e.gold_label).text, Setting.VACUOUS
            )
            for e in corpus.train
        ]
        return pairs, train
    if corpus.synthetic is not None and cfg.synthetic is not None:
        weight = cfg.synthetic.weights.get(setting)
        if weight is None:
            raise InvalidConfig(f"[harness] no degradation weight for {setting.value}")
        degraded = degradation_suite(corpus.synthetic, [weight])[0]
        synth_examples, pairs = synthetic_examples(
            sample_synthetic(degraded, cfg.synthetic.n_train, seed + 15_485_863),
            corpus.synthetic,
            setting=setting,
            id_prefix=f"{setting.name.lower()}-train",
        )
        return pairs, {e.id: e for e in synth_examples}
    adapter = TaskModelAdapter(setting, backend or backend_for(cfg, corpus), cfg.decode)
    batch = generate_pairs(adapter, corpus.train, perturbation)
    return list(batch.pairs), train


@dataclass(frozen=True)
class CellResult:
    seed: int
    setting: Setting
    aggregates: dict[Metric, AggregateScore]
    records: tuple[ScoreRecord, ...]
    n_excluded: int = 0
    diffs: dict[Metric, tuple[int, ...]] = field(default_factory=dict)


def evaluate_cell(
    cfg: ExperimentConfig,
    corpus: Corpus,
    scorer: ConditionalLabelScorer,
    setting: Setting,
    seed: int,
) -> CellResult:
    pairs, examples, n_excluded = pairs_for_setting(cfg, corpus, setting, seed)
    if not pairs:
        raise EmptySet(f"[harness] no pairs to evaluate for {setting.value}")
    items = evaluation_items(pairs, examples, corpus.builder)
    records = score_items(
        scorer, items, epsilon=cfg.epsilon, seed=seed, max_workers=cfg.max_workers
    )
    aggregates: dict[Metric, AggregateScore] = {}
    diffs: dict[Metric, tuple[int, ...]] = {}
    proxy = cfg.proxy.with_seed(seed)
    train_pairs: list[RationaleLabelPair] = []
    train_examples: dict[str, Example] = {}
    if {Metric.LAS, Metric.RQ} & set(cfg.metrics):
        train_pairs, train_examples = proxy_training_pairs(cfg, corpus, setting, seed)
    for metric in cfg.metrics:
        if metric is Metric.REV:
            aggregates[metric] = aggregate_rev(records)
        elif metric is Metric.CVI:
            aggregates[metric] = AggregateScore(Metric.CVI, cvi(scorer, items), len(items))
        elif metric is Metric.LAS:
            las_flags = simulate_las_flags(pairs, examples, proxy, train_pairs, train_examples)
            aggregates[metric] = las(las_flags)
            diffs[metric] = tuple(f.diff for f in las_flags)
        else:
            rq_flags = simulate_rq_flags(pairs, examples, proxy, train_pairs, train_examples)
            aggregates[metric] = rq(rq_flags)
            diffs[metric] = tuple(f.diff for f in rq_flags)
    logger.info(
        "seed %d %s: %s",
        seed,
        setting.value,
        ", ".join(f"{m.value}={a.value:.4f}" for m, a in aggregates.items()),
    )
    return CellResult(seed, setting, aggregates, tuple(records), n_excluded, diffs)


async def run_cells_async(
    cells: Sequence[Callable[[], T]], max_concurrency: int | None = None
) -> list[T]:
    """Run independent cells on worker threads; results keep the input order."""
    semaphore = asyncio.Semaphore(max_concurrency or max(len(cells), 1))

    async def run(cell: Callable[[], T]) -> T:
        async with semaphore:
            return await asyncio.to_thread(cell)

    return list(await asyncio.gather(*(run(cell) for cell in cells)))


def _run_cells(cfg: ExperimentConfig, cells: Sequence[Callable[[], T]]) -> list[T]:
    if cfg.concurrent and len(cells) > 1:
        return asyncio.run(run_cells_async(cells, cfg.max_workers if cfg.max_workers > 1 else None))
    return [cell() for cell in cells]


@dataclass(frozen=True)
class ComparisonResult:
    cells: tuple[CellResult, ...]
    seed_means: dict[Setting, dict[Metric, float]]
    rankings: dict[Metric, tuple[Setting, ...]]
    fingerprints: dict[int, str | None]

    def to_dict(self) -> dict[str, Any]:
        return {
            "cells": [
                {
                    "seed": cell.seed,
                    "setting": cell.setting.value,
                    "n_excluded": cell.n_excluded,
                    "aggregates": {m.value: a.to_dict() for m, a in cell.aggregates.items()},
                }
                for cell in self.cells
            ],
            "seed_means": {
                s.value: {m.value: v for m, v in means.items()}
                for s, means in self.seed_means.items()
            },
            "rankings": {m.value: [s.value for s in order] for m, order in self.rankings.items()},
            "fingerprints": {str(seed): fp for seed, fp in self.fingerprints.items()},
        }


def rank_settings(means: Mapping[Setting, float]) -> tuple[Setting, ...]:
    """Settings by descending mean; ties keep the configured order."""
    order = list(means)
    return tuple(sorted(order, key=lambda s: (-means[s], order.index(s))))


def summarize_cells(
    cells: Sequence[CellResult], settings: Sequence[Setting], metrics: Sequence[Metric]
) -> tuple[dict[Setting, dict[Metric, float]], dict[Metric, tuple[Setting, ...]]]:
    per_setting: dict[Setting, dict[Metric, list[float]]] = defaultdict(lambda: defaultdict(list))
    for cell in cells:
        for metric, aggregate in cell.aggregates.items():
            per_setting[cell.setting][metric].append(aggregate.value)
    seed_means = {
        setting: {
            metric: math.fsum(per_setting[setting][metric]) / len(per_setting[setting][metric])
            for metric in metrics
            if per_setting[setting][metric]
        }
        for setting in settings
    }
    rankings = {
        metric: rank_settings(
            {s: seed_means[s][metric] for s in settings if metric in seed_means[s]}
        )
        for metric in metrics
    }
    return seed_means, rankings


def run_metric_comparison(cfg: ExperimentConfig, persist: bool = True) -> ComparisonResult:
    cells: list[CellResult] = []
    fingerprints: dict[int, str | None] = {}
    for seed in cfg.seeds:
        corpus = load_corpus(cfg, seed)
        scorer = evaluator_for(cfg, corpus, seed)
        fingerprints[seed] = scorer.training_fingerprint
        tasks = [
            (lambda setting=setting: evaluate_cell(cfg, corpus, scorer, setting, seed))
            for setting in cfg.settings
        ]
        cells.extend(_run_cells(cfg, tasks))
    seed_means, rankings = summarize_cells(cells, cfg.settings, cfg.metrics)
    result = ComparisonResult(tuple(cells), seed_means, rankings, fingerprints)
    if persist:
        records_dir = Path(cfg.out_dir) / "records"
        for cell in cells:
            stem = f"{cell.setting.name.lower()}-seed{cell.seed}"
            write_score_records(
                cell.records, records_dir / f"{stem}.jsonl", records_dir / f"{stem}.csv"
            )
    return result


@dataclass(frozen=True)
class SweepResult:
    sigma_squared: float
    accuracy: float
    n_pairs: int
    n_excluded: int
    n_correct: int
    n_incorrect: int
    means: dict[Metric, dict[str, float]]
    aggregates: dict[Metric, float] = field(default_factory=dict)
    records: tuple[ScoreRecord, ...] = field(default=(), compare=False, repr=False)
    correct: dict[str, bool] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.accuracy <= 1.0:
            raise InvalidConfig(f"[sweep] accuracy out of range: {self.accuracy}")

    def weighting_gap(self, metric: Metric) -> float:
        """|overall - count-weighted split means|; zero up to float error."""
        split = self.means[metric]
        total = self.n_correct + self.n_incorrect
        if total == 0:
            return 0.0
        combined = (
            self.n_correct * split["correct"] + self.n_incorrect * split["incorrect"]
        ) / total
        return abs(split["overall"] - combined)

    def to_dict(self) -> dict[str, Any]:
        return {
            "sigma_squared": self.sigma_squared,
            "accuracy": self.accuracy,
            "n_pairs": self.n_pairs,
            "n_excluded": self.n_excluded,
            "n_correct": self.n_correct,
            "n_incorrect": self.n_incorrect,
            "means": {m.value: v for m, v in self.means.items()},
            "aggregates": {m.value: v for m, v in self.aggregates.items()},
        }


def _split_means(values: Mapping[str, float], correct: Mapping[str, bool]) -> dict[str, float]:
    right = [v for k, v in values.items() if correct.get(k, False)]
    wrong = [v for k, v in values.items() if not correct.get(k, False)]
    return {
        "overall": math.fsum(values.values()) / len(values) if values else 0.0,
        "correct": math.fsum(right) / len(right) if right else 0.0,
        "incorrect": math.fsum(wrong) / len(wrong) if wrong else 0.0,
    }


def sweep_point(
    cfg: ExperimentConfig,
    corpus: Corpus,
    scorer: ConditionalLabelScorer,
    backend: Backend,
    sigma_squared: float,
) -> SweepResult:
    perturbation = PerturbationConfig(
        sigma_squared, cfg.perturbation_seed, perturb_special_tokens=cfg.perturb_special_tokens
    )
    adapter = TaskModelAdapter(cfg.sweep_setting, backend, cfg.decode)
    batch = generate_pairs(adapter, corpus.test, perturbation)
    examples = {e.id: e for e in corpus.test}
    pairs = list(batch.pairs)
    means: dict[Metric, dict[str, float]] = {}
    aggregates: dict[Metric, float] = {}
    rev_records: list[ScoreRecord] = []
    if pairs:
        train_pairs: list[RationaleLabelPair] = []
        train_examples: dict[str, Example] = {}
        if {Metric.LAS, Metric.RQ} & set(cfg.metrics):
            train_pairs, train_examples = proxy_training_pairs(
                cfg, corpus, cfg.sweep_setting, cfg.seeds[0], perturbation, backend
            )
        for metric in cfg.metrics:
            if metric in (Metric.REV, Metric.CVI):
                items = evaluation_items(pairs, examples, corpus.builder)
                rev_records = score_items(scorer, items, epsilon=cfg.epsilon)
                split = split_by_correctness(rev_records, batch.correct)
                means[metric] = {k: split[k] for k in ("overall", "correct", "incorrect")}
                aggregates[metric] = split["overall"]
            elif metric is Metric.LAS:
                flags = simulate_las_flags(
                    pairs, examples, cfg.proxy, train_pairs, train_examples
                )
                means[metric] = _split_means({f.example_id: f.diff for f in flags}, batch.correct)
                aggregates[metric] = las(flags).value
            else:
                flags = simulate_rq_flags(pairs, examples, cfg.proxy, train_pairs, train_examples)
                means[metric] = _split_means({f.example_id: f.diff for f in flags}, batch.correct)
                aggregates[metric] = rq(flags).value
    else:
        means = {m: {"overall": 0.0, "correct": 0.0, "incorrect": 0.0} for m in cfg.metrics}
    n_correct = sum(batch.correct.values())
    logger.info(
        "sigma^2=%g: accuracy %.3f, %d pairs, %d excluded",
        sigma_squared, batch.accuracy, len(pairs), batch.n_excluded,
    )
    return SweepResult(
        sigma_squared=sigma_squared,
        accuracy=batch.accuracy,
        n_pairs=len(pairs),
        n_excluded=batch.n_excluded,
        n_correct=n_correct,
        n_incorrect=len(pairs) - n_correct,
        means=means,
        aggregates=aggregates,
        records=tuple(rev_records),
        correct=dict(batch.correct),
    )


def run_sensitivity_sweep(cfg: ExperimentConfig) -> list[SweepResult]:
    seed = cfg.seeds[0]
    corpus = load_corpus(cfg, seed)
    backend = backend_for(cfg, corpus)
    if any(v > 0 for v in cfg.perturbation_grid) and not backend.supports_embedding_noise:
        raise HookUnsupported(
            f"[sweep] {type(backend).__name__} does not expose an embedding-noise hook"
        )
    scorer = evaluator_for(cfg, corpus, seed)
    cells = [
        (lambda sigma=sigma: sweep_point(cfg, corpus, scorer, backend, sigma))
        for sigma in cfg.perturbation_grid
    ]
    return _run_cells(cfg, cells)


class AnnotationScheme(StrEnum):
    LIKERT4_MAJORITY = "LIKERT4_MAJORITY"
    GPT3_RELABELED = "GPT3_RELABELED"


LIKERT_SCALE = {"none": 0, "little": 1, "some": 2, "enough": 3}
GPT3_SCORE_MAP = {-1: 0, 0: 1, 1: 2}
_YES = {"yes", "y", "true", "1"}
_NO = {"no", "n", "false", "0"}


@dataclass(frozen=True)
class HumanAnnotationRecord:
    example_id: str
    supports_label: tuple[bool, ...]
    info_amount: tuple[float | None, ...] | None
    mapped_score: float
    setting: Setting | None = None

    @property
    def majority_supports(self) -> bool:
        return sum(self.supports_label) * 2 > len(self.supports_label)

    def to_dict(self) -> dict[str, Any]:
        return {
            "example_id": self.example_id,
            "supports_label": list(self.supports_label),
            "info_amount": list(self.info_amount) if self.info_amount is not None else None,
            "mapped_score": self.mapped_score,
            "setting": self.setting.value if self.setting else None,
        }


def _vote(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in _YES:
        return True
    if text in _NO:
        return False
    raise ValueError(f"unrecognized vote {value!r}")


def _likert(value: Any) -> float | None:
    if value is None or value == "":
        return None
    if isinstance(value, str) and value.strip().lower() in LIKERT_SCALE:
        return float(LIKERT_SCALE[value.strip().lower()])
    score = float(value)
    if score not in LIKERT_SCALE.values():
        raise ValueError(f"info amount must be on the 4-point scale, got {value!r}")
    return score


def _gpt3(value: Any) -> float | None:
    if value is None or value == "":
        return None
    original = int(value)
    if original not in GPT3_SCORE_MAP:
        raise ValueError(f"original score must be -1, 0 or 1, got {value!r}")
    return float(GPT3_SCORE_MAP[original])


def _annotation_record(
    record: Mapping[str, Any], scheme: AnnotationScheme, line: int, path: Path
) -> HumanAnnotationRecord:
    votes_raw = record["supports_label"]
    votes_raw = votes_raw if isinstance(votes_raw, list) else [votes_raw]
    votes = tuple(_vote(v) for v in votes_raw)
    if scheme is AnnotationScheme.LIKERT4_MAJORITY:
        if len(votes) != 3:
            raise WrongAnnotatorCount(
                f"{path}:{line}: expected 3 annotations, got {len(votes)}"
            )
        amounts_raw = record.get("info_amount")
        if amounts_raw is not None and len(amounts_raw) != 3:
            raise WrongAnnotatorCount(
                f"{path}:{line}: expected 3 info-amount slots, got {len(amounts_raw)}"
            )
        amounts = tuple(_likert(v) for v in amounts_raw) if amounts_raw is not None else None
    else:
        if not votes:
            raise WrongAnnotatorCount(f"{path}:{line}: no support votes")
        scores_raw = record.get("scores", record.get("score"))
        if scores_raw is None:
            amounts = None
        else:
            scores_raw = scores_raw if isinstance(scores_raw, list) else [scores_raw]
            amounts = tuple(_gpt3(v) for v in scores_raw)
    annotation = HumanAnnotationRecord(
        example_id=str(record["example_id"]),
        supports_label=votes,
        info_amount=amounts,
        mapped_score=-1.0,
        setting=Setting.parse(record["setting"]) if record.get("setting") else None,
    )
    if not annotation.majority_supports:
        return annotation
    given = [a for a in (amounts or ()) if a is not None]
    if not given:
        raise ValueError("majority supports the label but no information scores are given")
    return HumanAnnotationRecord(
        annotation.example_id,
        votes,
        amounts,
        math.fsum(given) / len(given),
        annotation.setting,
    )


def ingest_annotations(
    path: Path, scheme: AnnotationScheme | str
) -> list[HumanAnnotationRecord]:
    path = Path(path)
    scheme = AnnotationScheme(str(scheme).upper())
    if not path.exists():
        raise FileNotFoundError(f"Annotation file does not exist: {path}")
    records: list[HumanAnnotationRecord] = []
    with path.open("r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                records.append(_annotation_record(json.loads(raw), scheme, line_no, path))
            except WrongAnnotatorCount:
                raise
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SchemaViolation(str(exc), line_no, str(path)) from exc
    logger.info("ingested %d %s annotations from %s", len(records), scheme.value, path)
    return records


@dataclass(frozen=True)
class CorrelationReport:
    n: int
    per_setting: dict[Setting, dict[str, float]]
    human_ranking: tuple[Setting, ...]
    metric_ranking: tuple[Setting, ...]
    rank_agreement: bool | None
    spearman: float | None
    kendall: float | None
    human_support_rate: float
    metric_support_rate: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "per_setting": {s.value: v for s, v in self.per_setting.items()},
            "human_ranking": [s.value for s in self.human_ranking],
            "metric_ranking": [s.value for s in self.metric_ranking],
            "rank_agreement": self.rank_agreement,
            "spearman": self.spearman,
            "kendall": self.kendall,
            "human_support_rate": self.human_support_rate,
            "metric_support_rate": self.metric_support_rate,
        }


def _finite_or_none(value: float) -> float | None:
    value = float(value)
    return value if math.isfinite(value) else None


def correlate_with_human(
    records: Sequence[HumanAnnotationRecord], score_records: Sequence[ScoreRecord]
) -> CorrelationReport:
    by_pair = {(r.example_id, r.setting): r for r in score_records}
    by_id: dict[str, list[ScoreRecord]] = defaultdict(list)
    for r in score_records:
        by_id[r.example_id].append(r)
    joined: list[tuple[HumanAnnotationRecord, ScoreRecord]] = []
    missing: list[str] = []
    for annotation in records:
        if annotation.setting is not None:
            match = by_pair.get((annotation.example_id, annotation.setting))
        else:
            candidates = by_id.get(annotation.example_id, [])
            if len(candidates) > 1:
                raise JoinFailure(
                    f"[correlate] {annotation.example_id!r} is scored under several settings; "
                    "annotations must name their setting"
                )
            match = candidates[0] if candidates else None
        if match is None:
            missing.append(annotation.example_id)
        else:
            joined.append((annotation, match))
    if missing:
        raise JoinFailure(f"[correlate] no score record for annotations: {missing[:10]}")
    settings = list(dict.fromkeys(score.setting for _, score in joined))
    if len(settings) < 2 and len(joined) < 10:
        raise JoinFailure(
            f"[correlate] need >= 2 settings or >= 10 examples, got {len(joined)} examples"
        )

    per_setting: dict[Setting, dict[str, float]] = {}
    for setting in settings:
        group = [(a, s) for a, s in joined if s.setting is setting]
        per_setting[setting] = {
            "human": math.fsum(a.mapped_score for a, _ in group) / len(group),
            "metric": math.fsum(s.rev for _, s in group) / len(group),
            "n": float(len(group)),
        }
    human_ranking = rank_settings({s: v["human"] for s, v in per_setting.items()})
    metric_ranking = rank_settings({s: v["metric"] for s, v in per_setting.items()})
    human = np.array([a.mapped_score for a, _ in joined])
    metric = np.array([s.rev for _, s in joined])
    spearman = kendall = None
    if len(joined) >= 2 and np.ptp(human) > 0 and np.ptp(metric) > 0:
        spearman = _finite_or_none(spearmanr(human, metric).statistic)
        kendall = _finite_or_none(kendalltau(human, metric).statistic)
    return CorrelationReport(
        n=len(joined),
        per_setting=per_setting,
        human_ranking=human_ranking,
        metric_ranking=metric_ranking,
        rank_agreement=(human_ranking == metric_ranking) if len(settings) >= 2 else None,
        spearman=spearman,
        kendall=kendall,
        human_support_rate=sum(a.majority_supports for a, _ in joined) / len(joined),
        metric_support_rate=float(np.mean(metric > 0)),
    )


@dataclass(frozen=True)
class OracleCheck:
    name: str
    n: int
    seed: int
    exact_cmi: float
    exact_cmi_from_entropies: float
    corpus_rev: float
    cvi: float
    tolerance: float

    @property
    def error(self) -> float:
        return abs(self.corpus_rev - self.exact_cmi)

    @property
    def passed(self) -> bool:
        return self.error <= self.tolerance

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "n": self.n,
            "seed": self.seed,
            "exact_cmi": self.exact_cmi,
            "exact_cmi_from_entropies": self.exact_cmi_from_entropies,
            "enumeration_gap": abs(self.exact_cmi - self.exact_cmi_from_entropies),
            "corpus_rev": self.corpus_rev,
            "cvi": self.cvi,
            "error": self.error,
            "tolerance": self.tolerance,
            "status": "pass" if self.passed else "fail",
        }


def oracle_check(
    cfg: SyntheticConfig, n: int = 100_000, seed: int = 0, tolerance: float | None = None
) -> OracleCheck:
    """Corpus REV of the exact Bayes scorer on `n` samples against the enumerated CMI."""
    if tolerance is None:
        tolerance = 0.02 if n >= 100_000 else 0.05
    examples, pairs = synthetic_examples(sample_synthetic(cfg, n, seed), cfg)
    scorer = ExactBayesScorer(cfg)
    items = evaluation_items(pairs, examples, BaselineBuilder.for_synthetic())
    records = score_items(scorer, items)
    check = OracleCheck(
        name=cfg.name,
        n=n,
        seed=seed,
        exact_cmi=exact_cmi(cfg),
        exact_cmi_from_entropies=exact_cmi_from_entropies(cfg),
        corpus_rev=aggregate_rev(records).value,
        cvi=cvi(scorer, items),
        tolerance=tolerance,
    )
    logger.info(
        "oracle %s: corpus REV %.4f vs exact %.4f (n=%d)",
        cfg.name, check.corpus_rev, check.exact_cmi, n,
    )
    return check
