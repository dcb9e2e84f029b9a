"""Vacuous baseline rationales built from an input and the label under evaluation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from datetime import timedelta
from enum import StrEnum
from pathlib import Path
from typing import Protocol

from rationale_eval.cache import ResponseCache
from rationale_eval.config import stable_hash
from rationale_eval.corpus import NLI_LABELS, CQAInput, Example, NLIInput
from rationale_eval.errors import ConverterUnavailable, EmptyField, SchemaViolation, UnknownLabel
from rationale_eval.protocol import CommandClient

logger = logging.getLogger(__name__)

NLI_CONNECTIVES = {
    "entailment": "implies",
    "contradiction": "contradicts",
    "neutral": "is not related to",
}
_TERMINAL_PUNCTUATION = (".", "!", "?")


class Builder(StrEnum):
    NLI_TEMPLATE = "NLI_TEMPLATE"
    QA_CONVERTER_MODEL = "QA_CONVERTER_MODEL"
    QA_RULE_FALLBACK = "QA_RULE_FALLBACK"
    SYNTHETIC_RENDER = "SYNTHETIC_RENDER"


@dataclass(frozen=True)
class VacuousRationale:
    text: str
    builder: Builder
    source_example_id: str
    label_used: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise EmptyField(f"[baseline] empty baseline text for {self.source_example_id!r}")

    def to_dict(self) -> dict[str, str]:
        return {
            "text": self.text,
            "builder": self.builder.value,
            "source_example_id": self.source_example_id,
            "label_used": self.label_used,
        }


def _lower_leading(text: str) -> str:
    # Leave acronyms like "NASA" alone.
    if len(text) > 1 and text[1].isupper():
        return text
    return text[:1].lower() + text[1:]


def build_nli_baseline(
    premise: str, hypothesis: str, label: str, source_example_id: str = ""
) -> VacuousRationale:
    if label not in NLI_CONNECTIVES:
        raise UnknownLabel(f"[baseline] NLI label must be one of {NLI_LABELS}, got {label!r}")
    premise = premise.strip()
    hypothesis = hypothesis.strip()
    if not premise or not hypothesis:
        raise EmptyField("[baseline] NLI baseline needs a non-empty premise and hypothesis")
    if premise.endswith("."):
        premise = premise[:-1].rstrip()
    text = f"{premise} {NLI_CONNECTIVES[label]} {_lower_leading(hypothesis)}"
    return VacuousRationale(text, Builder.NLI_TEMPLATE, source_example_id, label)


def rule_based_declarativize(question: str, answer: str) -> str:
    question = question.strip()
    answer = answer.strip()
    if not question or not answer:
        raise EmptyField("[baseline] rule fallback needs a non-empty question and answer")
    suffix = "" if answer.endswith(_TERMINAL_PUNCTUATION) else "."
    return f"{question} The answer is {answer}{suffix}"


class DeclarativeConverter(Protocol):
    """Turns a (question, answer) pair into one declarative sentence."""

    def declarativize(self, question: str, answer: str) -> tuple[str, Builder]: ...


class RuleConverter:
    def declarativize(self, question: str, answer: str) -> tuple[str, Builder]:
        return rule_based_declarativize(question, answer), Builder.QA_RULE_FALLBACK


def converter_key(question: str, answer: str) -> str:
    return stable_hash(question, answer)


class CommandConverter:
    """Model-backed converter behind the JSON command protocol.

    Request `{"question", "answer"}`, response `{"sentence"}`.
    """

    def __init__(self, command: str | list[str], timeout: str | float | None = None):
        self.client = CommandClient.from_config(command, timeout, ConverterUnavailable)

    @property
    def timeout(self) -> timedelta | None:
        return self.client.timeout

    def declarativize(self, question: str, answer: str) -> tuple[str, Builder]:
        response = self.client.request({"question": question, "answer": answer})
        sentence = response.get("sentence")
        if not isinstance(sentence, str) or not sentence.strip():
            raise ConverterUnavailable(f"[baseline] converter returned no sentence: {response!r}")
        return sentence, Builder.QA_CONVERTER_MODEL


class CachedConverter:
    """Memoizes model-produced sentences of `inner`, keyed by `converter_key`.

    Rule-fallback outputs are never cached, so a later run with the model available
    still gets model sentences.
    """

    def __init__(self, inner: DeclarativeConverter, cache_path: Path | None = None):
        self.inner = inner
        self.cache = ResponseCache(cache_path)

    def declarativize(self, question: str, answer: str) -> tuple[str, Builder]:
        key = converter_key(question, answer)
        cached = self.cache.get(key)
        if cached is not None:
            return cached, Builder.QA_CONVERTER_MODEL
        sentence, builder = self.inner.declarativize(question, answer)
        if builder is Builder.QA_CONVERTER_MODEL:
            self.cache.put(key, sentence)
        return sentence, builder


class GoldenConverter:
    """Replays pinned converter outputs (`{"question", "answer", "sentence"}` lines)."""

    def __init__(self, path: Path):
        self.path = Path(path)
        if not self.path.exists():
            raise FileNotFoundError(f"Golden converter file does not exist: {self.path}")
        self._sentences: dict[str, str] = {}
        with self.path.open("r", encoding="utf-8") as f:
            for line_no, raw in enumerate(f, start=1):
                if not raw.strip():
                    continue
                try:
                    record = json.loads(raw)
                    key = converter_key(record["question"], record["answer"])
                    self._sentences[key] = record["sentence"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise SchemaViolation(str(exc), line_no, str(self.path)) from exc

    def declarativize(self, question: str, answer: str) -> tuple[str, Builder]:
        sentence = self._sentences.get(converter_key(question, answer))
        if sentence is None:
            raise ConverterUnavailable(
                f"[baseline] no golden sentence for {question!r} / {answer!r} in {self.path}"
            )
        return sentence, Builder.QA_CONVERTER_MODEL


class FallbackConverter:
    """Tries `primary`; when it is unavailable, falls back to the rule template."""

    def __init__(self, primary: DeclarativeConverter, fallback: DeclarativeConverter | None = None):
        self.primary = primary
        self.fallback = fallback or RuleConverter()

    def declarativize(self, question: str, answer: str) -> tuple[str, Builder]:
        try:
            return self.primary.declarativize(question, answer)
        except ConverterUnavailable as exc:
            logger.warning("converter unavailable, using rule fallback: %s", exc)
            return self.fallback.declarativize(question, answer)


def build_qa_baseline(
    question: str,
    answer: str,
    converter: DeclarativeConverter,
    source_example_id: str = "",
) -> VacuousRationale:
    if not question.strip() or not answer.strip():
        raise EmptyField("[baseline] QA baseline needs a non-empty question and answer")
    text, builder = converter.declarativize(question, answer)
    return VacuousRationale(text, builder, source_example_id, answer)


class BaselineBuilder:
    """Builds the baseline for any example of a loaded corpus.

    NLI examples use the template, CQA examples (including QuaRTz) go through the converter,
    and synthetic examples already carry their rendered baseline as the question text.
    """

    def __init__(
        self,
        converter: DeclarativeConverter | None = None,
        fallback: bool = True,
        synthetic: bool = False,
    ):
        converter = converter or RuleConverter()
        if fallback and not isinstance(converter, (RuleConverter, FallbackConverter)):
            converter = FallbackConverter(converter)
        self.converter = converter
        self.synthetic = synthetic

    @classmethod
    def for_synthetic(cls) -> BaselineBuilder:
        return cls(synthetic=True)

    def build(self, example: Example, label: str) -> VacuousRationale:
        if label not in example.candidates:
            raise UnknownLabel(f"[baseline] {label!r} is not a candidate of {example.id!r}")
        if isinstance(example.input, NLIInput):
            return build_nli_baseline(
                example.input.premise, example.input.hypothesis, label, example.id
            )
        assert isinstance(example.input, CQAInput)
        if self.synthetic:
            return VacuousRationale(
                example.input.question, Builder.SYNTHETIC_RENDER, example.id, label
            )
        return build_qa_baseline(example.input.question, label, self.converter, example.id)

    def __call__(self, example: Example, label: str) -> VacuousRationale:
        return self.build(example, label)
