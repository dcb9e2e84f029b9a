"""Evaluator families mapping a rationale/baseline context to a label distribution.

One evaluator is trained on `[rationale, baseline]` contexts; the baseline-only term is read
from the same evaluator with the rationale slot left empty.
"""

from __future__ import annotations

import json
import logging
import math
import re
import shlex
from abc import ABC, abstractmethod
from collections import defaultdict
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, replace
from enum import StrEnum
from pathlib import Path
from typing import Any, ClassVar

import numpy as np
from scipy.special import logsumexp
from sklearn.feature_extraction import DictVectorizer
from sklearn.linear_model import LogisticRegression

from rationale_eval.baselines import BaselineBuilder, VacuousRationale
from rationale_eval.config import canonical_json, stable_hash, write_json_atomic
from rationale_eval.corpus import Example
from rationale_eval.errors import (
    BackendUnavailable,
    DivergedTraining,
    EmptyField,
    EmptyTrainingSet,
    InvalidConfig,
    UnknownLabel,
    UntrainedScorer,
)
from rationale_eval.protocol import CommandClient

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12
_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


class CandidatePolicy(StrEnum):
    CLOSED_SET = "CLOSED_SET"
    OPEN = "OPEN"


class SeedMode(StrEnum):
    INIT = "init"
    ORDER = "order"
    BOTH = "both"


class FeatureMap(StrEnum):
    TOKEN_SET = "token-set"
    SLOT_TOKENS = "slot-tokens"
    BASELINE_ONLY = "baseline-only"
    FULL_TEXT = "full-text"


@dataclass(frozen=True)
class ScoringContext:
    rationale: str | None
    baseline: VacuousRationale | None
    candidates: tuple[str, ...]
    input_text: str | None = None

    def __post_init__(self) -> None:
        if not self.candidates:
            raise EmptyField("[scorer] scoring context needs at least one candidate")
        if len(set(self.candidates)) != len(self.candidates):
            raise InvalidConfig(f"[scorer] candidates must be distinct: {self.candidates!r}")
        if self.baseline is None and self.input_text is None:
            raise EmptyField("[scorer] scoring context needs a baseline or an input text")

    @property
    def has_rationale(self) -> bool:
        return bool(self.rationale)

    def without_rationale(self) -> ScoringContext:
        return replace(self, rationale=None)


def render_context(ctx: ScoringContext) -> str:
    """Pinned text encoding; an empty rationale slot renders as `[rationale] [baseline] {b}`."""
    slots: list[str] = []
    if ctx.input_text is not None:
        slots.append(f"[input] {ctx.input_text}")
    if ctx.baseline is not None:
        slots.append(f"[rationale] {ctx.rationale}" if ctx.rationale else "[rationale]")
        slots.append(f"[baseline] {ctx.baseline.text}")
    elif ctx.rationale:
        slots.append(f"[rationale] {ctx.rationale}")
    return " ".join(slots)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def context_features(ctx: ScoringContext, feature_map: FeatureMap | str) -> frozenset[str]:
    """Finite feature set of a context. Dropping the rationale only ever removes features."""
    feature_map = FeatureMap(feature_map)
    rationale = ctx.rationale or ""
    baseline = ctx.baseline.text if ctx.baseline is not None else ""
    features: set[str] = set()
    if ctx.input_text is not None:
        features.update(f"x:{tok}" for tok in tokenize(ctx.input_text))
    if feature_map is FeatureMap.TOKEN_SET:
        features.update(tokenize(rationale))
        features.update(tokenize(baseline))
    elif feature_map is FeatureMap.SLOT_TOKENS:
        features.update(f"r:{tok}" for tok in tokenize(rationale))
        features.update(f"b:{tok}" for tok in tokenize(baseline))
    elif feature_map is FeatureMap.BASELINE_ONLY:
        features.update(f"b:{tok}" for tok in tokenize(baseline))
    else:
        if rationale:
            features.add(f"r={rationale.strip()}")
        if baseline:
            features.add(f"b={baseline.strip()}")
    return frozenset(features)


@dataclass(frozen=True)
class TrainingRecord:
    rationale: str
    baseline: VacuousRationale | None
    label: str
    candidates: tuple[str, ...]
    input_text: str | None = None

    def context(self, with_rationale: bool = True) -> ScoringContext:
        return ScoringContext(
            rationale=self.rationale if with_rationale else None,
            baseline=self.baseline,
            candidates=self.candidates,
            input_text=self.input_text,
        )

    def digest_parts(self) -> tuple[str, ...]:
        baseline = self.baseline.text if self.baseline is not None else ""
        return (self.rationale, baseline, self.label, "\x1f".join(self.candidates),
                self.input_text or "")


def build_training_records(
    examples: Iterable[Example], baseline_builder: BaselineBuilder
) -> list[TrainingRecord]:
    """(gold rationale, baseline built from the gold label, gold label) for each example."""
    records: list[TrainingRecord] = []
    for example in examples:
        if not example.gold_rationale:
            continue
        records.append(
            TrainingRecord(
                rationale=example.gold_rationale,
                baseline=baseline_builder.build(example, example.gold_label),
                label=example.gold_label,
                candidates=example.candidates,
            )
        )
    return records


def data_fingerprint(records: Sequence[TrainingRecord], seed: int) -> str:
    data_hash = stable_hash(*("\x1e".join(r.digest_parts()) for r in records))
    return stable_hash(str(seed), data_hash)


class ConditionalLabelScorer(ABC):
    family_id: ClassVar[str]
    candidate_policy: CandidatePolicy = CandidatePolicy.CLOSED_SET
    training_fingerprint: str | None = None

    @abstractmethod
    def candidate_log_scores(self, ctx: ScoringContext) -> np.ndarray:
        """Unnormalized log scores aligned with `ctx.candidates`."""

    @abstractmethod
    def to_dict(self) -> dict[str, Any]: ...

    def distribution(self, ctx: ScoringContext) -> dict[str, float]:
        scores = np.asarray(self.candidate_log_scores(ctx), dtype=float)
        if not np.all(np.isfinite(scores) | (scores == -np.inf)) or np.all(scores == -np.inf):
            raise DivergedTraining(f"[scorer] {self.family_id} produced invalid scores: {scores}")
        log_probs = scores - logsumexp(scores)
        return {label: float(np.exp(lp)) for label, lp in zip(ctx.candidates, log_probs)}

    def log_prob(self, ctx: ScoringContext, label: str) -> float:
        if label not in ctx.candidates:
            raise UnknownLabel(f"[scorer] {label!r} is not among {ctx.candidates!r}")
        prob = self.distribution(ctx)[label]
        return math.log(max(prob, LOG_FLOOR))


def score_distribution(scorer: ConditionalLabelScorer, ctx: ScoringContext) -> dict[str, float]:
    return scorer.distribution(ctx)


def mean_nll(
    scorer: ConditionalLabelScorer,
    records: Sequence[TrainingRecord],
    with_rationale: bool = True,
) -> float:
    if not records:
        raise EmptyTrainingSet("[scorer] cannot compute NLL of an empty set")
    return math.fsum(
        -scorer.log_prob(r.context(with_rationale), r.label) for r in records
    ) / len(records)


class TabularScorer(ConditionalLabelScorer):
    """Conditional label frequencies over feature-set cells, with additive smoothing.

    A query counts every training cell whose feature set contains the query's features, so a
    context with an empty rationale slot reads the label frequencies marginalized over
    rationales. An untrained table is the uniform distribution.
    """

    family_id = "tabular"

    def __init__(self, feature_map: FeatureMap | str = FeatureMap.TOKEN_SET, alpha: float = 1.0):
        if alpha < 0:
            raise InvalidConfig(f"[scorer] smoothing alpha must be >= 0, got {alpha}")
        self.feature_map = FeatureMap(feature_map)
        self.alpha = float(alpha)
        self.cells: list[frozenset[str]] = []
        self.counts: list[dict[str, int]] = []
        self._cell_index: dict[frozenset[str], int] = {}
        self._postings: dict[str, set[int]] = defaultdict(set)
        self.training_fingerprint = None

    def observe(self, features: frozenset[str], label: str, count: int = 1) -> None:
        idx = self._cell_index.get(features)
        if idx is None:
            idx = len(self.cells)
            self._cell_index[features] = idx
            self.cells.append(features)
            self.counts.append({})
            for feature in features:
                self._postings[feature].add(idx)
        self.counts[idx][label] = self.counts[idx].get(label, 0) + count

    def _matching_cells(self, features: frozenset[str]) -> Iterable[int]:
        if not features:
            return range(len(self.cells))
        postings = sorted((self._postings.get(f, set()) for f in features), key=len)
        return set.intersection(*postings) if postings else set()

    def label_counts(self, ctx: ScoringContext) -> np.ndarray:
        features = context_features(ctx, self.feature_map)
        totals = dict.fromkeys(ctx.candidates, 0)
        for idx in self._matching_cells(features):
            for label, count in self.counts[idx].items():
                if label in totals:
                    totals[label] += count
        return np.array([totals[c] for c in ctx.candidates], dtype=float)

    def candidate_log_scores(self, ctx: ScoringContext) -> np.ndarray:
        smoothed = self.label_counts(ctx) + self.alpha
        if not np.any(smoothed > 0):
            return np.zeros(len(ctx.candidates))
        with np.errstate(divide="ignore"):
            return np.log(smoothed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "family_id": self.family_id,
            "feature_map": self.feature_map.value,
            "alpha": self.alpha,
            "training_fingerprint": self.training_fingerprint,
            "cells": [
                {"features": sorted(cell), "counts": dict(sorted(counts.items()))}
                for cell, counts in zip(self.cells, self.counts)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TabularScorer:
        scorer = cls(data["feature_map"], data["alpha"])
        for cell in data["cells"]:
            for label, count in cell["counts"].items():
                scorer.observe(frozenset(cell["features"]), label, int(count))
        scorer.training_fingerprint = data.get("training_fingerprint")
        return scorer


def _linear_features(
    ctx: ScoringContext, candidate: str, feature_map: FeatureMap
) -> dict[str, float]:
    features: dict[str, float] = {f"cand={candidate}": 1.0}
    candidate_tokens = set(tokenize(candidate))
    for feature in context_features(ctx, feature_map):
        features[f"{feature}&{candidate}"] = 1.0
    slots = {"x": ctx.input_text or "", "r": ctx.rationale or "",
             "b": ctx.baseline.text if ctx.baseline is not None else ""}
    for slot, text in slots.items():
        if text and candidate_tokens:
            overlap = len(candidate_tokens & set(tokenize(text))) / len(candidate_tokens)
            if overlap:
                features[f"overlap:{slot}"] = overlap
    return features


class LinearScorer(ConditionalLabelScorer):
    """Logistic regression over context x candidate indicator features, softmax over candidates."""

    family_id = "bag-of-features-linear"

    def __init__(self, feature_map: FeatureMap | str = FeatureMap.SLOT_TOKENS):
        self.feature_map = FeatureMap(feature_map)
        self.weights: dict[str, float] | None = None
        self.intercept = 0.0
        self.training_fingerprint = None

    @property
    def is_trained(self) -> bool:
        return self.weights is not None

    def candidate_log_scores(self, ctx: ScoringContext) -> np.ndarray:
        if self.weights is None:
            raise UntrainedScorer(f"[scorer] {self.family_id} scorer has not been trained")
        weights = self.weights
        return np.array(
            [
                self.intercept
                + math.fsum(
                    weights.get(name, 0.0) * value
                    for name, value in _linear_features(ctx, c, self.feature_map).items()
                )
                for c in ctx.candidates
            ]
        )

    def fit(
        self, records: Sequence[TrainingRecord], c: float, max_iter: int, seed: int,
        include_empty_slot: bool = False,
    ) -> None:
        rows: list[dict[str, float]] = []
        targets: list[int] = []
        for record in records:
            contexts = [record.context(True)]
            if include_empty_slot:
                contexts.append(record.context(False))
            for ctx in contexts:
                for candidate in record.candidates:
                    rows.append(_linear_features(ctx, candidate, self.feature_map))
                    targets.append(int(candidate == record.label))
        if len(set(targets)) < 2:
            raise EmptyTrainingSet("[scorer] linear family needs both gold and non-gold candidates")
        vectorizer = DictVectorizer(sparse=True, sort=True)
        matrix = vectorizer.fit_transform(rows)
        model = LogisticRegression(C=c, max_iter=max_iter, random_state=seed)
        model.fit(matrix, np.asarray(targets))
        coef = model.coef_[0]
        if not np.all(np.isfinite(coef)):
            raise DivergedTraining("[scorer] linear family produced non-finite weights")
        self.weights = {
            name: float(w)
            for name, w in zip(vectorizer.get_feature_names_out(), coef)
            if w != 0.0
        }
        self.intercept = float(model.intercept_[0])

    def to_dict(self) -> dict[str, Any]:
        if self.weights is None:
            raise UntrainedScorer(f"[scorer] cannot save an untrained {self.family_id} scorer")
        return {
            "family_id": self.family_id,
            "feature_map": self.feature_map.value,
            "intercept": self.intercept,
            "weights": dict(sorted(self.weights.items())),
            "training_fingerprint": self.training_fingerprint,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> LinearScorer:
        scorer = cls(data["feature_map"])
        scorer.weights = {str(k): float(v) for k, v in data["weights"].items()}
        scorer.intercept = float(data["intercept"])
        scorer.training_fingerprint = data.get("training_fingerprint")
        return scorer


class Seq2SeqAdapterScorer(ConditionalLabelScorer):
    """Externally hosted sequence-to-sequence evaluator.

    Train request `{"op": "train", "records", "epochs", "seed"}` answers
    `{"model_id", "losses"}`; score request `{"op": "score", "model_id", "context",
    "candidates"}` answers `{"scores"}` (per-candidate log scores).
    """

    family_id = "seq2seq-adapter"

    def __init__(self, client: CommandClient, model_id: str | None = None):
        self.client = client
        self.model_id = model_id
        self.losses: list[float] = []
        self.training_fingerprint = None

    def train(self, records: Sequence[TrainingRecord], epochs: int, seed: int,
              include_empty_slot: bool = False) -> list[float]:
        payload_records = []
        for record in records:
            contexts = [record.context(True)]
            if include_empty_slot:
                contexts.append(record.context(False))
            payload_records.extend(
                {"context": render_context(ctx), "candidates": list(record.candidates),
                 "label": record.label}
                for ctx in contexts
            )
        response = self.client.request(
            {"op": "train", "records": payload_records, "epochs": epochs, "seed": seed}
        )
        losses = [float(v) for v in response.get("losses", [])]
        if not losses or not all(math.isfinite(v) for v in losses):
            raise DivergedTraining(f"[scorer] seq2seq training loss is not finite: {losses}")
        self.model_id = str(response["model_id"])
        self.losses = losses
        logger.info("seq2seq adapter trained: loss %.4f -> %.4f", losses[0], losses[-1])
        return losses

    def candidate_log_scores(self, ctx: ScoringContext) -> np.ndarray:
        if self.model_id is None:
            raise UntrainedScorer(f"[scorer] {self.family_id} scorer has not been trained")
        response = self.client.request(
            {"op": "score", "model_id": self.model_id, "context": render_context(ctx),
             "candidates": list(ctx.candidates)}
        )
        scores = response.get("scores")
        if not isinstance(scores, list) or len(scores) != len(ctx.candidates):
            raise BackendUnavailable(f"[scorer] malformed score response: {response!r}")
        return np.asarray(scores, dtype=float)

    def to_dict(self) -> dict[str, Any]:
        return {
            "family_id": self.family_id,
            "model_id": self.model_id,
            "losses": self.losses,
            "client": self.client.to_config(),
            "training_fingerprint": self.training_fingerprint,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Seq2SeqAdapterScorer:
        client_config = data["client"]
        client = CommandClient.from_config(
            client_config["command"], client_config.get("timeout"), BackendUnavailable
        )
        scorer = cls(client, data.get("model_id"))
        scorer.losses = list(data.get("losses", []))
        scorer.training_fingerprint = data.get("training_fingerprint")
        return scorer


FAMILIES = ("tabular", "bag-of-features-linear", "seq2seq-adapter")


@dataclass(frozen=True)
class FamilyConfig:
    family: str = "tabular"
    seed: int = 0
    seed_mode: SeedMode = SeedMode.BOTH
    alpha: float = 1.0
    feature_map: FeatureMap = FeatureMap.TOKEN_SET
    include_empty_slot: bool = False
    c: float = 1.0
    max_iter: int = 1000
    epochs: int = 2
    command: tuple[str, ...] = ()
    timeout: str | float | None = None

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise InvalidConfig(f"[scorer] unknown family {self.family!r}; known: {FAMILIES}")
        object.__setattr__(self, "seed_mode", SeedMode(self.seed_mode))
        object.__setattr__(self, "feature_map", FeatureMap(self.feature_map))
        if self.family == "seq2seq-adapter" and not self.command:
            raise InvalidConfig("[scorer] seq2seq-adapter family needs a command")

    @classmethod
    def from_mapping(cls, data: dict[str, Any]) -> FamilyConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"[scorer] unknown family config keys: {sorted(unknown)}")
        values = dict(data)
        command = values.get("command", ())
        if isinstance(command, str):
            values["command"] = tuple(shlex.split(command))
        else:
            values["command"] = tuple(command or ())
        return cls(**values)

    def to_dict(self) -> dict[str, Any]:
        return {
            "family": self.family,
            "seed": self.seed,
            "seed_mode": self.seed_mode.value,
            "alpha": self.alpha,
            "feature_map": self.feature_map.value,
            "include_empty_slot": self.include_empty_slot,
            "c": self.c,
            "max_iter": self.max_iter,
            "epochs": self.epochs,
            "command": list(self.command),
            "timeout": self.timeout,
        }

    def with_seed(self, seed: int) -> FamilyConfig:
        return replace(self, seed=seed)

    @property
    def init_seed(self) -> int:
        return self.seed if self.seed_mode in (SeedMode.INIT, SeedMode.BOTH) else 0

    @property
    def shuffles(self) -> bool:
        return self.seed_mode in (SeedMode.ORDER, SeedMode.BOTH)


def fit_tabular_family(
    samples: Sequence[TrainingRecord],
    context_feature_map: FeatureMap | str = FeatureMap.TOKEN_SET,
    alpha: float = 1.0,
    include_empty_slot: bool = False,
) -> TabularScorer:
    scorer = TabularScorer(context_feature_map, alpha)
    for record in samples:
        scorer.observe(context_features(record.context(True), scorer.feature_map), record.label)
        if include_empty_slot:
            scorer.observe(
                context_features(record.context(False), scorer.feature_map), record.label
            )
    return scorer


def train_evaluator(
    train: Sequence[TrainingRecord], family_config: FamilyConfig | None = None
) -> ConditionalLabelScorer:
    config = family_config or FamilyConfig()
    if not train:
        raise EmptyTrainingSet("[scorer] cannot train an evaluator on an empty set")
    for record in train:
        if not record.rationale.strip() or not record.label:
            raise EmptyField("[scorer] training records need a gold rationale and a gold label")
    records = list(train)
    if config.shuffles:
        order = np.random.default_rng(config.seed).permutation(len(records))
        records = [records[i] for i in order]
    logger.info(
        "training %s evaluator on %d records (seed %d)", config.family, len(records), config.seed
    )

    scorer: ConditionalLabelScorer
    if config.family == "tabular":
        initial_nll = mean_nll(TabularScorer(config.feature_map, config.alpha), records)
        scorer = fit_tabular_family(
            records, config.feature_map, config.alpha, config.include_empty_slot
        )
    elif config.family == "bag-of-features-linear":
        initial_nll = math.fsum(math.log(len(r.candidates)) for r in records) / len(records)
        scorer = LinearScorer(config.feature_map)
        scorer.fit(records, config.c, config.max_iter, config.init_seed, config.include_empty_slot)
    else:
        client = CommandClient.from_config(config.command, config.timeout, BackendUnavailable)
        scorer = Seq2SeqAdapterScorer(client)
        losses = scorer.train(records, config.epochs, config.init_seed, config.include_empty_slot)
        initial_nll = losses[0]
    scorer.training_fingerprint = data_fingerprint(train, config.seed)

    final_nll = mean_nll(scorer, records)
    if not math.isfinite(final_nll):
        raise DivergedTraining(f"[scorer] training loss is not finite: {final_nll}")
    if final_nll > initial_nll + 1e-9:
        raise DivergedTraining(
            f"[scorer] {config.family} evaluator ended above its initial loss: "
            f"{final_nll:.4f} > {initial_nll:.4f}"
        )
    logger.info("trained %s evaluator: mean NLL %.4f nats", config.family, final_nll)
    return scorer


_LOADERS: dict[str, Callable[[dict[str, Any]], ConditionalLabelScorer]] = {
    TabularScorer.family_id: TabularScorer.from_dict,
    LinearScorer.family_id: LinearScorer.from_dict,
    Seq2SeqAdapterScorer.family_id: Seq2SeqAdapterScorer.from_dict,
}


def save_scorer(
    scorer: ConditionalLabelScorer, path: Path, config: FamilyConfig | None = None
) -> None:
    payload = scorer.to_dict()
    if config is not None:
        payload["config"] = config.to_dict()
    write_json_atomic(Path(path), payload)
    logger.info("saved %s scorer to %s", scorer.family_id, path)


def load_scorer(path: Path) -> ConditionalLabelScorer:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Scorer checkpoint does not exist: {path}")
    data = json.loads(path.read_text(encoding="utf-8"))
    family = data.get("family_id")
    if family == "exact-bayes":
        from rationale_eval.synth import ExactBayesScorer

        return ExactBayesScorer.from_dict(data)
    loader = _LOADERS.get(family)
    if loader is None:
        raise InvalidConfig(f"[scorer] unknown family in checkpoint {path}: {family!r}")
    return loader(data)


def scorer_digest(scorer: ConditionalLabelScorer) -> str:
    return stable_hash(canonical_json(scorer.to_dict()))
