from __future__ import annotations

import json
import math
import sys
from pathlib import Path
from typing import Any

import numpy as np
import pytest

from rationale_eval.baselines import BaselineBuilder, Builder, VacuousRationale
from rationale_eval.corpus import Schema, load_dataset
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
from rationale_eval.scorer import (
    ConditionalLabelScorer,
    FamilyConfig,
    FeatureMap,
    LinearScorer,
    ScoringContext,
    Seq2SeqAdapterScorer,
    TabularScorer,
    TrainingRecord,
    build_training_records,
    context_features,
    data_fingerprint,
    fit_tabular_family,
    load_scorer,
    mean_nll,
    render_context,
    save_scorer,
    score_distribution,
    scorer_digest,
    train_evaluator,
)
from rationale_eval.synth import (
    ExactBayesScorer,
    load_synthetic_config,
    sample_synthetic,
    synthetic_examples,
)

FIXTURES = Path(__file__).parent / "fixtures"
SEQ2SEQ = [sys.executable, str(FIXTURES / "backends" / "seq2seq_scorer.py")]
MUSHROOM_BASELINE = VacuousRationale(
    "Personal mushrooms can be kept fresh in the refrigerator.",
    Builder.QA_CONVERTER_MODEL,
    "ecqa-1",
    "refrigerator",
)


def _record(
    rationale: str,
    label: str,
    candidates: tuple[str, ...] = ("y0", "y1"),
    baseline: str = "the context is b0",
) -> TrainingRecord:
    return TrainingRecord(
        rationale, VacuousRationale(baseline, Builder.SYNTHETIC_RENDER, "s", label), label,
        candidates,
    )


def _skewed_records() -> list[TrainingRecord]:
    return [_record("the evidence is r0", "y0")] * 3 + [_record("the evidence is r1", "y1")]


def _polar_records() -> list[TrainingRecord]:
    records = []
    for _ in range(5):
        records.append(_record("water is wet", "yes", ("yes", "no"), "plain context"))
        records.append(_record("fire is cold", "no", ("yes", "no"), "plain context"))
    return records


class NanScorer(ConditionalLabelScorer):
    family_id = "nan"

    def candidate_log_scores(self, ctx: ScoringContext) -> np.ndarray:
        return np.full(len(ctx.candidates), np.nan)

    def to_dict(self) -> dict[str, Any]:
        return {"family_id": self.family_id}


def test_render_context_leaves_rationale_slot_empty() -> None:
    ctx = ScoringContext(
        "Refrigerators keep food fresh.", MUSHROOM_BASELINE, ("stove", "refrigerator")
    )
    assert render_context(ctx) == (
        "[rationale] Refrigerators keep food fresh. "
        "[baseline] Personal mushrooms can be kept fresh in the refrigerator."
    )
    assert render_context(ctx.without_rationale()) == (
        "[rationale] [baseline] Personal mushrooms can be kept fresh in the refrigerator."
    )
    proxy = ScoringContext("because", None, ("a", "b"), "Which one?")
    assert render_context(proxy) == "[input] Which one? [rationale] because"


def test_scoring_context_validation() -> None:
    with pytest.raises(EmptyField):
        ScoringContext("r", MUSHROOM_BASELINE, ())
    with pytest.raises(InvalidConfig, match="distinct"):
        ScoringContext("r", MUSHROOM_BASELINE, ("a", "a"))
    with pytest.raises(EmptyField):
        ScoringContext("r", None, ("a", "b"))


@pytest.mark.parametrize("feature_map", list(FeatureMap))
def test_dropping_rationale_only_removes_features(feature_map: FeatureMap) -> None:
    ctx = ScoringContext("Refrigerators keep food fresh.", MUSHROOM_BASELINE, ("stove",))
    assert context_features(ctx.without_rationale(), feature_map) <= context_features(
        ctx, feature_map
    )


def test_untrained_table_is_uniform() -> None:
    ctx = ScoringContext("anything", MUSHROOM_BASELINE, ("a", "b", "c", "d"))
    for alpha in (0.0, 1.0):
        dist = TabularScorer(alpha=alpha).distribution(ctx)
        assert dist == pytest.approx(dict.fromkeys("abcd", 0.25))
    with pytest.raises(InvalidConfig):
        TabularScorer(alpha=-1.0)


def test_tabular_empty_slot_reads_the_marginal() -> None:
    scorer = fit_tabular_family(_skewed_records(), FeatureMap.FULL_TEXT, alpha=0.0)
    with_r0 = _record("the evidence is r0", "y0").context(True)
    assert scorer.distribution(with_r0) == pytest.approx({"y0": 1.0, "y1": 0.0})
    assert scorer.distribution(with_r0.without_rationale()) == pytest.approx(
        {"y0": 0.75, "y1": 0.25}
    )
    assert scorer.log_prob(with_r0, "y1") == pytest.approx(math.log(1e-12))


def test_tabular_token_set_rationale_raises_gold_probability() -> None:
    scorer = fit_tabular_family(_skewed_records(), FeatureMap.TOKEN_SET, alpha=1.0)
    ctx = _record("the evidence is r1", "y1").context(True)
    assert scorer.log_prob(ctx, "y1") > scorer.log_prob(ctx.without_rationale(), "y1")
    assert math.fsum(score_distribution(scorer, ctx).values()) == pytest.approx(1.0)
    with pytest.raises(UnknownLabel):
        scorer.log_prob(ctx, "y7")


def test_tabular_empty_slot_training_adds_marginal_cells() -> None:
    scorer = fit_tabular_family(
        _skewed_records(), FeatureMap.FULL_TEXT, alpha=0.0, include_empty_slot=True
    )
    assert frozenset({"b=the context is b0"}) in scorer.cells


def test_train_evaluator_records_fingerprint_and_is_seeded() -> None:
    records = _skewed_records()
    config = FamilyConfig(feature_map="full-text", seed=3)
    scorer = train_evaluator(records, config)
    assert scorer.training_fingerprint == data_fingerprint(records, 3)
    assert data_fingerprint(records, 4) != data_fingerprint(records, 3)
    again = train_evaluator(records, config)
    assert scorer_digest(again) == scorer_digest(scorer)
    assert mean_nll(scorer, records) < math.log(2)


def test_train_evaluator_rejects_empty_and_blank_inputs() -> None:
    with pytest.raises(EmptyTrainingSet):
        train_evaluator([])
    with pytest.raises(EmptyField):
        train_evaluator([_record("   ", "y0")])
    with pytest.raises(EmptyTrainingSet):
        mean_nll(TabularScorer(), [])


def test_build_training_records_uses_gold_label_baselines() -> None:
    examples = load_dataset(FIXTURES / "data" / "ecqa.jsonl", Schema.ECQA)
    records = build_training_records(examples, BaselineBuilder())
    assert len(records) == 3
    for record, example in zip(records, examples):
        assert record.label == example.gold_label
        assert record.baseline is not None
        assert record.baseline.label_used == example.gold_label
        assert record.rationale == example.gold_rationale


def test_linear_family_learns_rationale_tokens() -> None:
    records = _polar_records()
    scorer = train_evaluator(records, FamilyConfig(family="bag-of-features-linear", seed=1))
    assert isinstance(scorer, LinearScorer)
    wet = records[0].context(True)
    cold = records[1].context(True)
    assert scorer.distribution(wet)["yes"] > 0.5
    assert scorer.distribution(cold)["no"] > 0.5


def test_linear_family_needs_training() -> None:
    ctx = _polar_records()[0].context(True)
    with pytest.raises(UntrainedScorer):
        LinearScorer().distribution(ctx)
    with pytest.raises(UntrainedScorer):
        LinearScorer().to_dict()
    single = [_record("water is wet", "yes", ("yes",), "plain context")]
    with pytest.raises(EmptyTrainingSet, match="both gold and non-gold"):
        LinearScorer().fit(single, c=1.0, max_iter=100, seed=0)


@pytest.mark.parametrize(
    "config",
    [FamilyConfig(feature_map="full-text"), FamilyConfig(family="bag-of-features-linear")],
)
def test_checkpoint_round_trip(tmp_path: Path, config: FamilyConfig) -> None:
    records = _polar_records()
    scorer = train_evaluator(records, config)
    save_scorer(scorer, tmp_path / "scorer.json", config)
    reloaded = load_scorer(tmp_path / "scorer.json")
    assert reloaded.family_id == scorer.family_id
    assert reloaded.training_fingerprint == scorer.training_fingerprint
    ctx = records[0].context(True)
    assert reloaded.distribution(ctx) == pytest.approx(scorer.distribution(ctx))
    saved = json.loads((tmp_path / "scorer.json").read_text(encoding="utf-8"))
    assert saved["config"]["family"] == config.family


def test_load_scorer_errors(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        load_scorer(tmp_path / "missing.json")
    path = tmp_path / "mystery.json"
    path.write_text(json.dumps({"family_id": "mystery"}), encoding="utf-8")
    with pytest.raises(InvalidConfig, match="unknown family"):
        load_scorer(path)


def test_non_finite_scores_are_diverged() -> None:
    ctx = ScoringContext("r", MUSHROOM_BASELINE, ("a", "b"))
    with pytest.raises(DivergedTraining):
        NanScorer().distribution(ctx)


def test_seq2seq_adapter_trains_and_scores_over_protocol(tmp_path: Path) -> None:
    candidates = ("stove", "refrigerator")
    records = [
        _record("the refrigerator keeps food fresh", "refrigerator", candidates, "plain context"),
        _record("a stove is for cooking", "stove", candidates, "plain context"),
    ]
    config = FamilyConfig(family="seq2seq-adapter", command=tuple(SEQ2SEQ), epochs=3,
                          timeout="30s")
    scorer = train_evaluator(records, config)
    assert isinstance(scorer, Seq2SeqAdapterScorer)
    assert scorer.model_id == "overlap-0-2"
    assert scorer.losses == pytest.approx([1.0, 0.5, 1 / 3])
    ctx = records[0].context(True)
    assert scorer.distribution(ctx)["refrigerator"] == pytest.approx(
        math.exp(2) / (1 + math.exp(2))
    )
    assert scorer.distribution(ctx.without_rationale()) == pytest.approx(
        {"stove": 0.5, "refrigerator": 0.5}
    )

    save_scorer(scorer, tmp_path / "seq2seq.json")
    reloaded = load_scorer(tmp_path / "seq2seq.json")
    assert isinstance(reloaded, Seq2SeqAdapterScorer)
    assert reloaded.client.command == tuple(SEQ2SEQ)
    assert reloaded.model_id == scorer.model_id


def test_training_that_ends_above_its_initial_loss_is_diverged() -> None:
    candidates = ("stove", "refrigerator")
    records = [
        _record("the refrigerator keeps food fresh", "refrigerator", candidates, "plain context"),
        _record("a stove is for cooking", "stove", candidates, "plain context"),
    ]
    config = FamilyConfig(family="seq2seq-adapter", command=(*SEQ2SEQ, "0.01"), epochs=2,
                          timeout="30s")
    with pytest.raises(DivergedTraining, match="above its initial loss"):
        train_evaluator(records, config)


def test_seq2seq_adapter_errors() -> None:
    ctx = ScoringContext("r", MUSHROOM_BASELINE, ("a", "b"))
    client = CommandClient.from_config(SEQ2SEQ)
    with pytest.raises(UntrainedScorer):
        Seq2SeqAdapterScorer(client).distribution(ctx)
    echo_backend = [sys.executable, str(FIXTURES / "backends" / "protocol_echo.py"), "echo"]
    malformed = Seq2SeqAdapterScorer(CommandClient.from_config(echo_backend), model_id="m")
    with pytest.raises(BackendUnavailable, match="malformed"):
        malformed.distribution(ctx)


def test_family_config_validation() -> None:
    with pytest.raises(InvalidConfig, match="unknown family"):
        FamilyConfig(family="transformer")
    with pytest.raises(InvalidConfig, match="needs a command"):
        FamilyConfig(family="seq2seq-adapter")
    with pytest.raises(InvalidConfig, match="unknown family config keys"):
        FamilyConfig.from_mapping({"familly": "tabular"})
    parsed = FamilyConfig.from_mapping(
        {"family": "seq2seq-adapter", "command": "python -m scorer --fast", "seed_mode": "order"}
    )
    assert parsed.command == ("python", "-m", "scorer", "--fast")
    assert parsed.shuffles
    assert parsed.with_seed(5).init_seed == 0
    assert FamilyConfig(seed=5, seed_mode="init").init_seed == 5
    assert not FamilyConfig(seed_mode="init").shuffles
    assert FamilyConfig.from_mapping(FamilyConfig().to_dict()) == FamilyConfig()


def _c1_records(n: int, seed: int, prefix: str) -> list[TrainingRecord]:
    c1 = load_synthetic_config(FIXTURES / "synthetic" / "c1.json")
    examples, _ = synthetic_examples(sample_synthetic(c1, n, seed=seed), c1, id_prefix=prefix)
    return build_training_records(examples, BaselineBuilder.for_synthetic())


@pytest.mark.slow
def test_tabular_log_loss_approaches_exact_bayes() -> None:
    exact = ExactBayesScorer(load_synthetic_config(FIXTURES / "synthetic" / "c1.json"))
    scorer = fit_tabular_family(_c1_records(50_000, 0, "train"), FeatureMap.FULL_TEXT)
    held_out = _c1_records(10_000, 1, "test")
    assert mean_nll(scorer, held_out) - mean_nll(exact, held_out) <= 0.02


@pytest.mark.slow
def test_tabular_posteriors_match_exact_bayes_on_c1() -> None:
    c1 = load_synthetic_config(FIXTURES / "synthetic" / "c1.json")
    exact = ExactBayesScorer(c1)
    scorer = fit_tabular_family(_c1_records(100_000, 0, "train"), FeatureMap.FULL_TEXT, 1.0)
    n_b, n_r, _ = c1.sizes
    errors = []
    for b in range(n_b):
        baseline = VacuousRationale(f"the context is b{b}", Builder.SYNTHETIC_RENDER, "s", "y0")
        for r in range(n_r):
            ctx = ScoringContext(f"the evidence is r{r}", baseline, c1.labels)
            fitted = score_distribution(scorer, ctx)
            truth = exact.distribution(ctx)
            errors.extend(abs(fitted[label] - truth[label]) for label in c1.labels)
    assert float(np.mean(errors)) <= 0.01
    assert max(errors) <= 0.03


@pytest.mark.slow
def test_richer_feature_map_is_no_worse_than_its_sub_family() -> None:
    train = _c1_records(100_000, 0, "train")
    held_out = _c1_records(20_000, 1, "test")
    richer = fit_tabular_family(train, FeatureMap.TOKEN_SET)
    baseline_only = fit_tabular_family(train, FeatureMap.BASELINE_ONLY)
    assert mean_nll(richer, held_out) <= mean_nll(baseline_only, held_out) + 0.005
