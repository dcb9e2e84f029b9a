"""Dataset loading, validation and task-model serialization.

Every supported dataset is stored as line-delimited JSON, one example per line. A schema
adapter maps the public dataset's native columns into `Example`; loading never skips a
malformed line, it reports every offending line number in one `SchemaViolation`.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Callable, Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any

import numpy as np

from rationale_eval.config import write_lines_atomic
from rationale_eval.errors import EmptyField, InvalidConfig, MissingField, SchemaViolation

logger = logging.getLogger(__name__)

DEFAULT_EOS = "<eos>"
NLI_LABELS: tuple[str, ...] = ("entailment", "contradiction", "neutral")


class Task(StrEnum):
    CQA = "CQA"
    NLI = "NLI"


class Source(StrEnum):
    GOLD = "GOLD"
    GENERATED_XY_R = "GENERATED_XY_R"
    GENERATED_X_YR = "GENERATED_X_YR"
    GENERATED_X_RY = "GENERATED_X_RY"
    EXTERNAL = "EXTERNAL"


class Setting(StrEnum):
    """Where a rationale-label pair came from."""

    GOLD = "Y*R*"
    XY_R = "XY*->R"
    X_YR = "X->YR"
    X_RY = "X->RY"
    VACUOUS = "Y*;B"
    EXTERNAL = "EXTERNAL"

    @classmethod
    def parse(cls, value: str | Setting) -> Setting:
        if isinstance(value, Setting):
            return value
        normalized = value.strip().replace("→", "->").replace(" ", "").upper()
        for setting in cls:
            if setting.value.upper() == normalized or setting.name == normalized:
                return setting
        raise InvalidConfig(f"[setting] unknown rationale-label setting: {value!r}")

    @property
    def is_task_model(self) -> bool:
        return self in TASK_MODEL_SETTINGS


TASK_MODEL_SETTINGS = frozenset({Setting.XY_R, Setting.X_YR, Setting.X_RY})

GENERATED_SOURCE = {
    Setting.XY_R: Source.GENERATED_XY_R,
    Setting.X_YR: Source.GENERATED_X_YR,
    Setting.X_RY: Source.GENERATED_X_RY,
}


class Schema(StrEnum):
    ECQA = "ECQA"
    COSE = "COSE"
    QUARTZ = "QUARTZ"
    ESNLI = "ESNLI"
    GENERIC_TRIPLES = "GENERIC_TRIPLES"
    EXAMPLES = "EXAMPLES"


@dataclass(frozen=True)
class CQAInput:
    question: str
    choices: tuple[str, ...]


@dataclass(frozen=True)
class NLIInput:
    premise: str
    hypothesis: str


@dataclass(frozen=True)
class Example:
    id: str
    task: Task
    input: CQAInput | NLIInput
    gold_label: str
    gold_rationale: str | None = None
    source: Source = Source.GOLD

    @property
    def candidates(self) -> tuple[str, ...]:
        if isinstance(self.input, NLIInput):
            return NLI_LABELS
        return self.input.choices

    def input_text(self) -> str:
        """Task input without label or rationale; what a proxy model conditions on."""
        if isinstance(self.input, NLIInput):
            return f"[premise] {self.input.premise} [hypothesis] {self.input.hypothesis}"
        choices = "".join(f" [choice] {choice}" for choice in self.input.choices)
        return f"[question] {self.input.question}{choices}"

    def to_dict(self) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "id": self.id,
            "task": self.task.value,
            "gold_label": self.gold_label,
            "gold_rationale": self.gold_rationale,
            "source": self.source.value,
        }
        if isinstance(self.input, NLIInput):
            payload["premise"] = self.input.premise
            payload["hypothesis"] = self.input.hypothesis
        else:
            payload["question"] = self.input.question
            payload["choices"] = list(self.input.choices)
        return payload


@dataclass(frozen=True)
class RationaleLabelPair:
    example_id: str
    label: str
    rationale: str
    setting: Setting

    def __post_init__(self) -> None:
        if not self.label.strip():
            raise EmptyField(f"[pair] empty label for example {self.example_id!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "example_id": self.example_id,
            "label": self.label,
            "rationale": self.rationale,
            "setting": self.setting.value,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RationaleLabelPair:
        return cls(
            example_id=str(data["example_id"]),
            label=str(data["label"]),
            rationale=str(data.get("rationale") or ""),
            setting=Setting.parse(str(data["setting"])),
        )


@dataclass(frozen=True)
class SplitStats:
    n_train: int
    n_dev: int
    n_test: int

    def __post_init__(self) -> None:
        for name in ("n_train", "n_dev", "n_test"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"[split] {name} must be >= 0")

    def to_dict(self) -> dict[str, int]:
        return {"n_train": self.n_train, "n_dev": self.n_dev, "n_test": self.n_test}


EXPECTED_SPLITS: dict[Schema, SplitStats] = {
    Schema.ECQA: SplitStats(7598, 1090, 2194),
    Schema.COSE: SplitStats(8766, 975, 1221),
    Schema.QUARTZ: SplitStats(2696, 384, 784),
    Schema.ESNLI: SplitStats(54933, 9842, 9824),
}


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    observed: SplitStats
    expected: SplitStats
    mismatches: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "status": "pass" if self.passed else "fail",
            "observed": self.observed.to_dict(),
            "expected": self.expected.to_dict(),
            "mismatches": list(self.mismatches),
        }


@dataclass(frozen=True)
class ExampleSet:
    examples: tuple[Example, ...]
    schema: Schema
    path: Path | None = None
    pairs: tuple[RationaleLabelPair, ...] = ()
    _index: dict[str, Example] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._index.update((example.id, example) for example in self.examples)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[Example]:
        return iter(self.examples)

    def by_id(self, example_id: str) -> Example:
        try:
            return self._index[example_id]
        except KeyError:
            raise KeyError(f"[corpus] example not found: {example_id}") from None


@dataclass(frozen=True)
class DatasetSplits:
    train: ExampleSet
    dev: ExampleSet
    test: ExampleSet

    @property
    def stats(self) -> SplitStats:
        return SplitStats(len(self.train), len(self.dev), len(self.test))


def _require(record: dict[str, Any], key: str) -> Any:
    if key not in record or record[key] is None:
        raise MissingField(f"field missing: {key!r}")
    return record[key]


def _text(value: Any, key: str) -> str:
    text = str(value)
    if not text.strip():
        raise MissingField(f"field empty: {key!r}")
    return text


def _answer_from_key(choices: list[dict[str, Any]], answer_key: str) -> str:
    for choice in choices:
        if str(choice.get("label")) == answer_key:
            return _text(choice.get("text", ""), "choices.text")
    raise MissingField(f"answerKey {answer_key!r} matches no choice label")


def _cqa_example(
    example_id: str,
    question: str,
    choices: Iterable[str],
    answer: str,
    rationale: str | None,
    source: Source = Source.GOLD,
) -> Example:
    return Example(
        id=example_id,
        task=Task.CQA,
        input=CQAInput(question=question, choices=tuple(choices)),
        gold_label=answer,
        gold_rationale=rationale if rationale else None,
        source=source,
    )


Adapted = tuple[Example, RationaleLabelPair | None]


def _adapt_ecqa(record: dict[str, Any], line: int) -> Adapted:
    choices = [
        _text(record[f"q_op{index}"], f"q_op{index}")
        for index in range(1, 6)
        if record.get(f"q_op{index}") is not None
    ]
    example = _cqa_example(
        example_id=str(_require(record, "q_no")),
        question=_text(_require(record, "q_text"), "q_text"),
        choices=choices,
        answer=_text(_require(record, "q_ans"), "q_ans"),
        rationale=record.get("taskB"),
    )
    return example, None


def _adapt_csqa_style(record: dict[str, Any], rationale: str | None) -> Example:
    question = _require(record, "question")
    if not isinstance(question, dict):
        raise MissingField("field 'question' must be an object with 'stem' and 'choices'")
    raw_choices = _require(question, "choices")
    if not isinstance(raw_choices, list):
        raise MissingField("field 'question.choices' must be a list")
    return _cqa_example(
        example_id=str(_require(record, "id")),
        question=_text(_require(question, "stem"), "question.stem"),
        choices=[_text(choice.get("text", ""), "choices.text") for choice in raw_choices],
        answer=_answer_from_key(raw_choices, str(_require(record, "answerKey"))),
        rationale=rationale,
    )


def _adapt_cose(record: dict[str, Any], line: int) -> Adapted:
    explanation = record.get("explanation")
    if isinstance(explanation, dict):
        rationale = explanation.get("open-ended")
    else:
        rationale = explanation
    return _adapt_csqa_style(record, rationale), None


def _adapt_quartz(record: dict[str, Any], line: int) -> Adapted:
    return _adapt_csqa_style(record, record.get("knowledge")), None


def _adapt_esnli(record: dict[str, Any], line: int) -> Adapted:
    example = Example(
        id=str(_require(record, "pairID")),
        task=Task.NLI,
        input=NLIInput(
            premise=_text(_require(record, "Sentence1"), "Sentence1"),
            hypothesis=_text(_require(record, "Sentence2"), "Sentence2"),
        ),
        gold_label=_text(_require(record, "gold_label"), "gold_label"),
        gold_rationale=record.get("Explanation_1") or None,
    )
    return example, None


def _adapt_generic_triples(record: dict[str, Any], line: int) -> Adapted:
    example_id = str(record.get("id", f"line-{line}"))
    label = _text(_require(record, "label"), "label")
    rationale = str(_require(record, "rationale"))
    gold = str(record.get("gold_label") or label)
    if "premise" in record:
        example = Example(
            id=example_id,
            task=Task.NLI,
            input=NLIInput(
                premise=_text(_require(record, "premise"), "premise"),
                hypothesis=_text(_require(record, "hypothesis"), "hypothesis"),
            ),
            gold_label=gold,
            source=Source.EXTERNAL,
        )
    else:
        choices = _require(record, "choices")
        if not isinstance(choices, list):
            raise MissingField("field 'choices' must be a list")
        example = _cqa_example(
            example_id=example_id,
            question=_text(_require(record, "question"), "question"),
            choices=[_text(choice, "choices") for choice in choices],
            answer=gold,
            rationale=None,
            source=Source.EXTERNAL,
        )
    pair = RationaleLabelPair(example_id, label, rationale, Setting.EXTERNAL)
    return example, pair


def _adapt_examples(record: dict[str, Any], line: int) -> Adapted:
    task = Task(str(_require(record, "task")))
    if task is Task.NLI:
        input_: CQAInput | NLIInput = NLIInput(
            premise=_text(_require(record, "premise"), "premise"),
            hypothesis=_text(_require(record, "hypothesis"), "hypothesis"),
        )
    else:
        input_ = CQAInput(
            question=_text(_require(record, "question"), "question"),
            choices=tuple(str(choice) for choice in _require(record, "choices")),
        )
    example = Example(
        id=str(_require(record, "id")),
        task=task,
        input=input_,
        gold_label=_text(_require(record, "gold_label"), "gold_label"),
        gold_rationale=record.get("gold_rationale") or None,
        source=Source(str(record.get("source", Source.GOLD.value))),
    )
    return example, None


def example_from_dict(record: Mapping[str, Any]) -> Example:
    """Build one validated example from the canonical dict form; `task` may be omitted."""
    record = dict(record)
    record.setdefault("task", Task.NLI.value if "premise" in record else Task.CQA.value)
    record.setdefault("id", "example")
    example, _ = _adapt_examples(record, 0)
    check_example(example)
    return example


SCHEMA_ADAPTERS: dict[Schema, Callable[[dict[str, Any], int], Adapted]] = {
    Schema.ECQA: _adapt_ecqa,
    Schema.COSE: _adapt_cose,
    Schema.QUARTZ: _adapt_quartz,
    Schema.ESNLI: _adapt_esnli,
    Schema.GENERIC_TRIPLES: _adapt_generic_triples,
    Schema.EXAMPLES: _adapt_examples,
}


def check_example(example: Example) -> None:
    """Raise `MissingField`/`ValueError` when an example breaks the data-model invariants."""
    candidates = example.candidates
    if example.task is Task.CQA:
        if len(set(candidates)) < 2:
            raise MissingField("CQA examples need at least 2 distinct choices")
        if len(set(candidates)) != len(candidates):
            raise ValueError("duplicate choices")
    if example.gold_label not in candidates:
        raise ValueError(f"label {example.gold_label!r} not in candidate set {list(candidates)}")


def load_dataset(path: Path, schema: Schema | str) -> ExampleSet:
    """Load a line-delimited JSON dataset through its schema adapter."""
    path = Path(path)
    schema = Schema(str(schema).upper())
    if not path.exists():
        raise FileNotFoundError(f"Dataset file does not exist: {path}")
    adapter = SCHEMA_ADAPTERS[schema]

    examples: list[Example] = []
    pairs: list[RationaleLabelPair] = []
    seen: set[str] = set()
    problems: list[tuple[int, str]] = []
    with path.open("r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
                if not isinstance(record, dict):
                    raise ValueError("line must be a JSON object")
                example, pair = adapter(record, line_no)
                check_example(example)
                if pair is not None and pair.label not in example.candidates:
                    raise ValueError(f"label {pair.label!r} not in candidate set")
                if example.id in seen:
                    raise ValueError(f"duplicate id {example.id!r}")
            except (ValueError, KeyError, TypeError) as exc:
                problems.append((line_no, str(exc)))
                continue
            seen.add(example.id)
            examples.append(example)
            if pair is not None:
                pairs.append(pair)

    if problems:
        detail = "; ".join(f"line {line}: {message}" for line, message in problems[:20])
        raise SchemaViolation(
            f"{len(problems)} malformed line(s) under schema {schema.value}: {detail}",
            line=problems[0][0],
            path=str(path),
        )
    logger.info("loaded %d examples from %s (%s)", len(examples), path, schema.value)
    return ExampleSet(examples=tuple(examples), schema=schema, path=path, pairs=tuple(pairs))


def holdout_split(
    examples: ExampleSet, fraction: float = 0.1, seed: int = 0
) -> tuple[ExampleSet, ExampleSet]:
    """Deterministically move `ceil(fraction * n)` examples into a held-out set."""
    if not 0.0 < fraction < 1.0:
        raise InvalidConfig(f"[split] holdout fraction must be in (0, 1): {fraction}")
    n_holdout = math.ceil(fraction * len(examples))
    order = np.random.default_rng(seed).permutation(len(examples))
    held = set(int(index) for index in order[:n_holdout])
    kept = tuple(ex for index, ex in enumerate(examples.examples) if index not in held)
    out = tuple(ex for index, ex in enumerate(examples.examples) if index in held)
    return (
        ExampleSet(kept, examples.schema, examples.path),
        ExampleSet(out, examples.schema, examples.path),
    )


def load_splits(directory: Path, schema: Schema | str, seed: int = 0) -> DatasetSplits:
    """Load `train/dev/test.jsonl`; CoS-E has no test rationales, so dev becomes test."""
    directory = Path(directory)
    schema = Schema(str(schema).upper())
    train = load_dataset(directory / "train.jsonl", schema)
    dev = load_dataset(directory / "dev.jsonl", schema)
    test_path = directory / "test.jsonl"
    if schema is Schema.COSE and not test_path.exists():
        new_train, new_dev = holdout_split(train, 0.1, seed)
        return DatasetSplits(train=new_train, dev=new_dev, test=dev)
    return DatasetSplits(train=train, dev=dev, test=load_dataset(test_path, schema))


def validate_split_counts(stats: SplitStats, expected: SplitStats) -> ValidationReport:
    mismatches = tuple(
        f"{name}: observed {getattr(stats, name)}, expected {getattr(expected, name)}"
        for name in ("n_train", "n_dev", "n_test")
        if getattr(stats, name) != getattr(expected, name)
    )
    return ValidationReport(
        passed=not mismatches, observed=stats, expected=expected, mismatches=mismatches
    )


def _input_prefix(example: Example) -> str:
    if isinstance(example.input, NLIInput):
        if not example.input.premise or not example.input.hypothesis:
            raise MissingField(f"[serialize] {example.id}: premise and hypothesis required")
        return example.input_text()
    if not example.input.question:
        raise MissingField(f"[serialize] {example.id}: question required")
    if not example.input.choices:
        raise MissingField(f"[serialize] {example.id}: at least one choice required")
    return example.input_text()


def serialize_input(example: Example, setting: Setting | str) -> str:
    """Task-model input text (bracket-tag format) for a task-model setting."""
    setting = Setting.parse(setting)
    prefix = _input_prefix(example)
    if setting is Setting.XY_R:
        if not example.gold_label:
            raise MissingField(f"[serialize] {example.id}: gold label required for {setting}")
        return f"{prefix} [answer] {example.gold_label} [rationale]"
    if setting is Setting.X_YR:
        return f"{prefix} [answer]"
    if setting is Setting.X_RY:
        return f"{prefix} [rationale]"
    raise InvalidConfig(f"[serialize] {setting.value} is not a task-model setting")


def serialize_target(label: str, rationale: str, setting: Setting | str, eos: str) -> str:
    setting = Setting.parse(setting)
    if setting is Setting.XY_R:
        return f"{rationale} {eos}"
    if setting is Setting.X_YR:
        return f"{label} [rationale] {rationale} {eos}"
    if setting is Setting.X_RY:
        return f"{rationale} [answer] {label} {eos}"
    raise InvalidConfig(f"[serialize] {setting.value} is not a task-model setting")


def serialize_for_task(
    example: Example, setting: Setting | str, eos: str = DEFAULT_EOS
) -> tuple[str, str]:
    """Return `(input_text, target_text)` for training a task model."""
    setting = Setting.parse(setting)
    input_text = serialize_input(example, setting)
    if not example.gold_rationale:
        raise MissingField(f"[serialize] {example.id}: gold rationale required for {setting}")
    target = serialize_target(example.gold_label, example.gold_rationale, setting, eos)
    return input_text, target


def split_target(text: str, setting: Setting | str, eos: str = DEFAULT_EOS) -> tuple[str, str]:
    """Split a target/generation into `(label, rationale)`; label is "" for XY*->R."""
    setting = Setting.parse(setting)
    body = text.strip()
    if eos and body.endswith(eos):
        body = body[: -len(eos)].rstrip()
    if setting is Setting.XY_R:
        return "", body
    if setting is Setting.X_YR:
        label, sep, rationale = body.partition(" [rationale] ")
        if not sep:
            label, sep, rationale = body.partition("[rationale]")
        if not sep:
            raise ValueError("missing [rationale] tag")
        return label.strip(), rationale.strip()
    if setting is Setting.X_RY:
        rationale, sep, label = body.rpartition(" [answer] ")
        if not sep:
            rationale, sep, label = body.rpartition("[answer]")
        if not sep:
            raise ValueError("missing [answer] tag")
        return label.strip(), rationale.strip()
    raise InvalidConfig(f"[parse] {setting.value} is not a task-model setting")


def parse_task_text(
    input_text: str,
    target_text: str,
    task: Task | str,
    setting: Setting | str,
    eos: str = DEFAULT_EOS,
) -> dict[str, Any]:
    """Invert `serialize_for_task` back into its fields."""
    task = Task(str(task))
    setting = Setting.parse(setting)
    body = input_text
    label_from_input: str | None = None
    if setting is Setting.XY_R:
        body = body.removesuffix(" [rationale]")
        body, _, label_from_input = body.rpartition(" [answer] ")
    elif setting is Setting.X_YR:
        body = body.removesuffix(" [answer]")
    else:
        body = body.removesuffix(" [rationale]")

    fields: dict[str, Any] = {}
    if task is Task.NLI:
        premise_part, _, hypothesis = body.partition(" [hypothesis] ")
        fields["premise"] = premise_part.removeprefix("[premise] ")
        fields["hypothesis"] = hypothesis
    else:
        parts = body.removeprefix("[question] ").split(" [choice] ")
        fields["question"] = parts[0]
        fields["choices"] = parts[1:]

    target = target_text.removesuffix(f" {eos}")
    if setting is Setting.XY_R:
        fields["label"] = label_from_input
        fields["rationale"] = target
    elif setting is Setting.X_YR:
        fields["label"], _, fields["rationale"] = target.partition(" [rationale] ")
    else:
        fields["rationale"], _, fields["label"] = target.rpartition(" [answer] ")
    return fields


def write_examples(path: Path, examples: Iterable[Example]) -> None:
    lines = (json.dumps(ex.to_dict(), ensure_ascii=False, sort_keys=True) for ex in examples)
    write_lines_atomic(Path(path), lines)


def write_pairs(path: Path, pairs: Iterable[RationaleLabelPair]) -> None:
    lines = (json.dumps(p.to_dict(), ensure_ascii=False, sort_keys=True) for p in pairs)
    write_lines_atomic(Path(path), lines)


def load_pairs(path: Path) -> list[RationaleLabelPair]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Pairs file does not exist: {path}")
    pairs: list[RationaleLabelPair] = []
    with path.open("r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                pairs.append(RationaleLabelPair.from_dict(json.loads(raw)))
            except (ValueError, KeyError, TypeError) as exc:
                raise SchemaViolation(str(exc), line=line_no, path=str(path)) from exc
    return pairs
