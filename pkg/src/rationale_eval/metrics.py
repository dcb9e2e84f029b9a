"""REV, conditional V-entropy, CVI, and the LAS / RQ comparison metrics."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any

import numpy as np

from rationale_eval.baselines import BaselineBuilder, VacuousRationale
from rationale_eval.config import write_lines_atomic
from rationale_eval.corpus import Example, ExampleSet, RationaleLabelPair, Setting
from rationale_eval.errors import (
    BaselineLabelMismatch,
    EmptySet,
    InvalidConfig,
    MissingFlags,
    SchemaViolation,
)
from rationale_eval.scorer import (
    ConditionalLabelScorer,
    FamilyConfig,
    ScoringContext,
    TrainingRecord,
    train_evaluator,
)

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-6
CSV_COLUMNS = ("example_id", "setting", "log_p_with", "log_p_without", "rev", "sign", "seed")


class Sign(StrEnum):
    SUPPORTS_WITH_NEW_INFO = "SUPPORTS_WITH_NEW_INFO"
    NO_NEW_INFO = "NO_NEW_INFO"
    CONTRARY_INFO = "CONTRARY_INFO"


class Metric(StrEnum):
    REV = "REV"
    LAS = "LAS"
    RQ = "RQ"
    CVI = "CVI"


def interpret_sign(rev: float, epsilon: float = DEFAULT_EPSILON) -> Sign:
    if epsilon < 0:
        raise InvalidConfig(f"[metrics] epsilon must be >= 0, got {epsilon}")
    if rev > epsilon:
        return Sign.SUPPORTS_WITH_NEW_INFO
    if rev < -epsilon:
        return Sign.CONTRARY_INFO
    return Sign.NO_NEW_INFO


def to_log_base(value_nats: float, base: float | str = "e") -> float:
    """Convert a value in nats for reporting; `"e"` leaves it unchanged."""
    if base == "e":
        return value_nats
    base = float(base)
    if base <= 1:
        raise InvalidConfig(f"[metrics] log base must be > 1, got {base}")
    return value_nats / math.log(base)


@dataclass(frozen=True)
class ScoreRecord:
    example_id: str
    setting: Setting
    log_p_with: float
    log_p_without: float
    rev: float
    sign: Sign
    evaluator_fingerprint: str | None = None
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "example_id": self.example_id,
            "setting": self.setting.value,
            "log_p_with": self.log_p_with,
            "log_p_without": self.log_p_without,
            "rev": self.rev,
            "sign": self.sign.value,
            "evaluator_fingerprint": self.evaluator_fingerprint,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ScoreRecord:
        return cls(
            example_id=str(data["example_id"]),
            setting=Setting.parse(data["setting"]),
            log_p_with=float(data["log_p_with"]),
            log_p_without=float(data["log_p_without"]),
            rev=float(data["rev"]),
            sign=Sign(data["sign"]),
            evaluator_fingerprint=data.get("evaluator_fingerprint"),
            seed=int(data.get("seed", 0)),
        )


@dataclass(frozen=True)
class AggregateScore:
    metric: Metric
    value: float
    n: int
    breakdown: dict[str, float] | None = None
    warnings: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric.value,
            "value": self.value,
            "n": self.n,
            "breakdown": self.breakdown,
            "warnings": list(self.warnings),
        }


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class EvalItem:
    """One pair ready for scoring: its context includes the rationale."""

    example_id: str
    setting: Setting
    context: ScoringContext
    label: str


def _example_lookup(examples: ExampleSet | Mapping[str, Example] | Iterable[Example]):
    if isinstance(examples, ExampleSet):
        return examples.by_id
    if isinstance(examples, Mapping):
        return examples.__getitem__
    index = {example.id: example for example in examples}
    return index.__getitem__


def evaluation_items(
    pairs: Sequence[RationaleLabelPair],
    examples: ExampleSet | Mapping[str, Example] | Iterable[Example],
    baseline_builder: BaselineBuilder,
) -> list[EvalItem]:
    lookup = _example_lookup(examples)
    items = []
    for pair in pairs:
        example = lookup(pair.example_id)
        baseline = baseline_builder.build(example, pair.label)
        items.append(
            EvalItem(
                pair.example_id,
                pair.setting,
                ScoringContext(pair.rationale, baseline, example.candidates),
                pair.label,
            )
        )
    return items


def _score_item(
    scorer: ConditionalLabelScorer, item: EvalItem, epsilon: float, seed: int
) -> ScoreRecord:
    log_p_with = scorer.log_prob(item.context, item.label)
    log_p_without = scorer.log_prob(item.context.without_rationale(), item.label)
    rev = log_p_with - log_p_without
    return ScoreRecord(
        example_id=item.example_id,
        setting=item.setting,
        log_p_with=log_p_with,
        log_p_without=log_p_without,
        rev=rev,
        sign=interpret_sign(rev, epsilon),
        evaluator_fingerprint=scorer.training_fingerprint,
        seed=seed,
    )


def pointwise_rev(
    scorer: ConditionalLabelScorer,
    example: Example,
    pair: RationaleLabelPair,
    baseline: VacuousRationale,
    *,
    epsilon: float = DEFAULT_EPSILON,
    seed: int = 0,
) -> ScoreRecord:
    if baseline.label_used != pair.label:
        raise BaselineLabelMismatch(
            f"[metrics] baseline built for {baseline.label_used!r} but pair "
            f"{pair.example_id!r} has label {pair.label!r}"
        )
    ctx = ScoringContext(pair.rationale, baseline, example.candidates)
    return _score_item(scorer, EvalItem(pair.example_id, pair.setting, ctx, pair.label),
                       epsilon, seed)


def score_items(
    scorer: ConditionalLabelScorer,
    items: Sequence[EvalItem],
    *,
    epsilon: float = DEFAULT_EPSILON,
    seed: int = 0,
    max_workers: int | None = None,
) -> list[ScoreRecord]:
    """Pointwise REV for every item; with `max_workers` the scoring runs on a thread pool."""
    if max_workers is None or max_workers <= 1:
        return [_score_item(scorer, item, epsilon, seed) for item in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda item: _score_item(scorer, item, epsilon, seed), items))


def aggregate_rev(records: Sequence[ScoreRecord]) -> AggregateScore:
    if not records:
        raise EmptySet("[metrics] cannot aggregate an empty set of score records")
    return AggregateScore(Metric.REV, _mean([r.rev for r in records]), len(records))


def corpus_rev(
    scorer: ConditionalLabelScorer,
    pairs: Sequence[RationaleLabelPair],
    baseline_builder: BaselineBuilder,
    examples: ExampleSet | Mapping[str, Example] | Iterable[Example],
    *,
    epsilon: float = DEFAULT_EPSILON,
    seed: int = 0,
    max_workers: int | None = None,
) -> tuple[AggregateScore, list[ScoreRecord]]:
    if not pairs:
        raise EmptySet("[metrics] corpus REV needs at least one pair")
    items = evaluation_items(pairs, examples, baseline_builder)
    records = score_items(scorer, items, epsilon=epsilon, seed=seed, max_workers=max_workers)
    return aggregate_rev(records), records


def conditional_v_entropy(
    scorer: ConditionalLabelScorer, eval_set: Sequence[EvalItem], use_rationale: bool
) -> float:
    if not eval_set:
        raise EmptySet("[metrics] conditional V-entropy needs a non-empty set")
    return _mean(
        [
            -scorer.log_prob(item.context if use_rationale else item.context.without_rationale(),
                             item.label)
            for item in eval_set
        ]
    )


def cvi(scorer: ConditionalLabelScorer, eval_set: Sequence[EvalItem]) -> float:
    return conditional_v_entropy(scorer, eval_set, False) - conditional_v_entropy(
        scorer, eval_set, True
    )


@dataclass(frozen=True)
class ProxyFlags:
    example_id: str
    correct_with_r: bool
    correct_without_r: bool
    leaked: bool

    @property
    def diff(self) -> int:
        return int(self.correct_with_r) - int(self.correct_without_r)


@dataclass(frozen=True)
class GoldProxyFlags:
    example_id: str
    gold_correct_with_r: bool
    gold_correct_without_r: bool

    @property
    def diff(self) -> int:
        return int(self.gold_correct_with_r) - int(self.gold_correct_without_r)


def _coerce_flags(record: Any, cls: type, names: tuple[str, ...]) -> Any:
    if isinstance(record, cls):
        return record
    if not isinstance(record, Mapping):
        raise MissingFlags(f"[metrics] expected {cls.__name__} or a mapping, got {record!r}")
    missing = [name for name in names if record.get(name) is None]
    if missing:
        raise MissingFlags(
            f"[metrics] record {record.get('example_id')!r} is missing flags: {missing}"
        )
    return cls(str(record.get("example_id", "")), *(bool(record[name]) for name in names))


class EmptyGroupPolicy(StrEnum):
    ZERO = "zero"
    SINGLE = "single"


def las(
    proxy_predictions: Iterable[ProxyFlags | Mapping[str, Any]],
    empty_group_policy: EmptyGroupPolicy | str = EmptyGroupPolicy.ZERO,
) -> AggregateScore:
    """Macro average of the leaked and non-leaked group means of the simulator diffs.

    An empty group contributes 0 (`"zero"`) or the score falls back to the other group's mean
    (`"single"`); either way a warning is attached.
    """
    flags = [
        _coerce_flags(r, ProxyFlags, ("correct_with_r", "correct_without_r", "leaked"))
        for r in proxy_predictions
    ]
    if not flags:
        raise EmptySet("[metrics] LAS needs at least one record")
    leaked = [f.diff for f in flags if f.leaked]
    non_leaked = [f.diff for f in flags if not f.leaked]
    warnings: list[str] = []
    mean_leaked = _mean(leaked) if leaked else 0.0
    mean_non_leaked = _mean(non_leaked) if non_leaked else 0.0
    if leaked and non_leaked:
        value = (mean_leaked + mean_non_leaked) / 2
    else:
        empty = "leaked" if not leaked else "non-leaked"
        warnings.append(f"{empty} group is empty")
        logger.warning("LAS %s group is empty (%d records)", empty, len(flags))
        if EmptyGroupPolicy(empty_group_policy) is EmptyGroupPolicy.SINGLE:
            value = mean_leaked if leaked else mean_non_leaked
        else:
            value = (mean_leaked + mean_non_leaked) / 2
    return AggregateScore(
        Metric.LAS,
        value,
        len(flags),
        breakdown={
            "leaked": mean_leaked,
            "non_leaked": mean_non_leaked,
            "n_leaked": float(len(leaked)),
            "n_non_leaked": float(len(non_leaked)),
        },
        warnings=tuple(warnings),
    )


def rq(proxy_predictions: Iterable[GoldProxyFlags | Mapping[str, Any]]) -> AggregateScore:
    flags = [
        _coerce_flags(r, GoldProxyFlags, ("gold_correct_with_r", "gold_correct_without_r"))
        for r in proxy_predictions
    ]
    if not flags:
        raise EmptySet("[metrics] RQ needs at least one record")
    return AggregateScore(Metric.RQ, _mean([f.diff for f in flags]), len(flags))


def _argmax_label(scorer: ConditionalLabelScorer, ctx: ScoringContext) -> str:
    dist = scorer.distribution(ctx)
    best = max(dist.values())
    return next(label for label in ctx.candidates if dist[label] == best)


def _proxy_records(
    pairs: Sequence[RationaleLabelPair],
    lookup,
    use_gold_label: bool,
) -> list[TrainingRecord]:
    records = []
    for pair in pairs:
        example = lookup(pair.example_id)
        records.append(
            TrainingRecord(
                rationale=pair.rationale,
                baseline=None,
                label=example.gold_label if use_gold_label else pair.label,
                candidates=example.candidates,
                input_text=example.input_text(),
            )
        )
    return records


def _fit_proxy(
    pairs: Sequence[RationaleLabelPair],
    lookup,
    family_config: FamilyConfig | None,
    train_pairs: Sequence[RationaleLabelPair] | None,
    train_examples: ExampleSet | Mapping[str, Example] | Iterable[Example] | None,
    use_gold_label: bool,
) -> ConditionalLabelScorer:
    if not train_pairs:
        logger.warning(
            "no training pairs for the %s proxy; fitting it on the %d pairs it scores",
            "RQ" if use_gold_label else "LAS", len(pairs),
        )
        return train_evaluator(_proxy_records(pairs, lookup, use_gold_label), family_config)
    train_lookup = _example_lookup(train_examples) if train_examples is not None else lookup
    return train_evaluator(
        _proxy_records(train_pairs, train_lookup, use_gold_label), family_config
    )


def _proxy_contexts(
    pair: RationaleLabelPair, example: Example
) -> tuple[ScoringContext, ScoringContext, ScoringContext]:
    with_r = ScoringContext(pair.rationale, None, example.candidates, example.input_text())
    return with_r, with_r.without_rationale(), ScoringContext(
        pair.rationale, None, example.candidates, ""
    )


def simulate_las_flags(
    pairs: Sequence[RationaleLabelPair],
    examples: ExampleSet | Mapping[str, Example] | Iterable[Example],
    family_config: FamilyConfig | None = None,
    train_pairs: Sequence[RationaleLabelPair] | None = None,
    train_examples: ExampleSet | Mapping[str, Example] | Iterable[Example] | None = None,
) -> list[ProxyFlags]:
    """Train a simulator on task-model outputs and flag each pair.

    A pair is leaked iff the simulator recovers its label from the rationale alone.
    """
    lookup = _example_lookup(examples)
    proxy = _fit_proxy(pairs, lookup, family_config, train_pairs, train_examples, False)
    flags = []
    for pair in pairs:
        example = lookup(pair.example_id)
        with_r, without_r, rationale_only = _proxy_contexts(pair, example)
        flags.append(
            ProxyFlags(
                pair.example_id,
                correct_with_r=_argmax_label(proxy, with_r) == pair.label,
                correct_without_r=_argmax_label(proxy, without_r) == pair.label,
                leaked=_argmax_label(proxy, rationale_only) == pair.label,
            )
        )
    return flags


def simulate_rq_flags(
    pairs: Sequence[RationaleLabelPair],
    examples: ExampleSet | Mapping[str, Example] | Iterable[Example],
    family_config: FamilyConfig | None = None,
    train_pairs: Sequence[RationaleLabelPair] | None = None,
    train_examples: ExampleSet | Mapping[str, Example] | Iterable[Example] | None = None,
) -> list[GoldProxyFlags]:
    """Train a proxy on gold labels and flag whether each rationale helps it find the gold."""
    lookup = _example_lookup(examples)
    proxy = _fit_proxy(pairs, lookup, family_config, train_pairs, train_examples, True)
    flags = []
    for pair in pairs:
        example = lookup(pair.example_id)
        with_r, without_r, _ = _proxy_contexts(pair, example)
        flags.append(
            GoldProxyFlags(
                pair.example_id,
                gold_correct_with_r=_argmax_label(proxy, with_r) == example.gold_label,
                gold_correct_without_r=_argmax_label(proxy, without_r) == example.gold_label,
            )
        )
    return flags


def split_by_correctness(
    records: Sequence[ScoreRecord], predictions: Mapping[str, bool]
) -> dict[str, float]:
    """Mean REV over correct / incorrect predictions and overall, with group sizes."""
    if not records:
        raise EmptySet("[metrics] cannot split an empty set of score records")
    correct = [r.rev for r in records if predictions.get(r.example_id, False)]
    incorrect = [r.rev for r in records if not predictions.get(r.example_id, False)]
    return {
        "correct": _mean(correct) if correct else 0.0,
        "incorrect": _mean(incorrect) if incorrect else 0.0,
        "overall": _mean([r.rev for r in records]),
        "n_correct": float(len(correct)),
        "n_incorrect": float(len(incorrect)),
    }


def rev_histogram(
    records: Sequence[ScoreRecord],
    bins: int = 20,
    value_range: tuple[float, float] | None = None,
) -> tuple[list[int], list[float]]:
    if not records:
        raise EmptySet("[metrics] cannot histogram an empty set of score records")
    counts, edges = np.histogram([r.rev for r in records], bins=bins, range=value_range)
    return [int(c) for c in counts], [float(e) for e in edges]


def write_score_records(
    records: Sequence[ScoreRecord], jsonl_path: Path, csv_path: Path | None = None
) -> None:
    lines = (json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=True) for r in records)
    write_lines_atomic(Path(jsonl_path), lines)
    if csv_path is not None:
        write_lines_atomic(Path(csv_path), score_records_csv_lines(records))
    logger.info("wrote %d score records to %s", len(records), jsonl_path)


def score_records_csv_lines(records: Sequence[ScoreRecord]) -> list[str]:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for record in records:
        data = record.to_dict()
        writer.writerow([data[c] for c in CSV_COLUMNS])
    return buffer.getvalue().splitlines()


def read_score_records(path: Path) -> list[ScoreRecord]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Score record file does not exist: {path}")
    records = []
    with path.open("r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                records.append(ScoreRecord.from_dict(json.loads(raw)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise SchemaViolation(str(exc), line_no, str(path)) from exc
    return records
