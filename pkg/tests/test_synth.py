from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pytest

from rationale_eval.baselines import Builder, VacuousRationale
from rationale_eval.corpus import Setting, Task
from rationale_eval.errors import InvalidConfig, UnknownLabel
from rationale_eval.scorer import ScoringContext, load_scorer, save_scorer
from rationale_eval.synth import (
    ExactBayesScorer,
    SyntheticConfig,
    copy_channel_config,
    degradation_suite,
    empirical_joint,
    exact_cmi,
    exact_cmi_from_entropies,
    exact_conditional_entropy,
    independent_config,
    load_synthetic_config,
    sample_synthetic,
    save_synthetic_config,
    synthetic_examples,
    total_variation,
)

SYNTHETIC = Path(__file__).parent / "fixtures" / "synthetic"


def _context(b: int, r: int | None, labels: tuple[str, ...]) -> ScoringContext:
    baseline = VacuousRationale(f"the context is b{b}", Builder.SYNTHETIC_RENDER, "s", labels[0])
    rationale = f"the evidence is r{r}" if r is not None else None
    return ScoringContext(rationale, baseline, labels)


def test_copy_channel_carries_one_bit_in_nats() -> None:
    cfg = copy_channel_config()
    assert cfg.sizes == (1, 2, 2)
    assert exact_cmi(cfg) == pytest.approx(math.log(2), abs=1e-12)
    assert exact_conditional_entropy(cfg, given_rationale=True) == pytest.approx(0.0, abs=1e-12)
    assert exact_cmi_from_entropies(cfg) == pytest.approx(math.log(2), abs=1e-12)


def test_fixture_configs_load() -> None:
    copy = load_synthetic_config(SYNTHETIC / "c_copy.json")
    assert np.array_equal(copy.table, copy_channel_config().table)
    indep = load_synthetic_config(SYNTHETIC / "c_indep.json")
    assert exact_cmi(indep) == pytest.approx(0.0, abs=1e-12)
    c1 = load_synthetic_config(SYNTHETIC / "c1.json")
    assert c1.sizes == (4, 4, 3)
    assert exact_cmi(c1) > 0


@pytest.mark.parametrize("name", ["c_copy.json", "c_indep.json", "c1.json"])
def test_enumeration_matches_entropy_difference(name: str) -> None:
    cfg = load_synthetic_config(SYNTHETIC / name)
    assert exact_cmi(cfg) == pytest.approx(exact_cmi_from_entropies(cfg), abs=1e-9)


def test_independent_rationale_has_zero_information() -> None:
    p_by = np.array([[0.2, 0.3], [0.4, 0.1]])
    cfg = independent_config(p_by, np.array([0.25, 0.25, 0.5]))
    assert cfg.sizes == (2, 3, 2)
    assert exact_cmi(cfg) == pytest.approx(0.0, abs=1e-12)


def test_degradation_is_monotone_and_keeps_the_rationale_marginal() -> None:
    base = load_synthetic_config(SYNTHETIC / "c1.json")
    suite = degradation_suite(base, [0.0, 0.25, 0.5, 0.75, 1.0])
    values = [exact_cmi(cfg) for cfg in suite]
    assert values[0] == pytest.approx(exact_cmi(base), abs=1e-12)
    assert all(a > b for a, b in zip(values, values[1:-1]))
    assert values[-1] == pytest.approx(0.0, abs=1e-12)
    for cfg in suite:
        assert np.allclose(cfg.p_br(), base.p_br(), atol=1e-12)
        assert np.allclose(cfg.p_by(), base.p_by(), atol=1e-12)
    assert suite[1].name == "c1@0.25"


def test_degradation_rejects_weights_outside_unit_interval() -> None:
    with pytest.raises(InvalidConfig):
        degradation_suite(copy_channel_config(), [1.5])


@pytest.mark.parametrize(
    ("table", "match"),
    [
        (np.full((2, 2), 0.25), "3-dimensional"),
        (np.full((1, 1, 17), 1 / 17), "alphabet sizes"),
        (np.array([[[0.7, -0.2], [0.25, 0.25]]]), ">= 0"),
        (np.array([[[0.5, 0.2], [0.2, 0.2]]]), "sums to"),
        (np.array([[[0.5, 0.5]], [[0.0, 0.0]]]), "P\\(B=b\\)"),
    ],
)
def test_invalid_tables_are_rejected(table: np.ndarray, match: str) -> None:
    with pytest.raises(InvalidConfig, match=match):
        SyntheticConfig("bad", table)


def test_sizes_must_agree_with_table() -> None:
    data = json.loads((SYNTHETIC / "c_copy.json").read_text(encoding="utf-8"))
    data["sizes"]["r"] = 3
    with pytest.raises(InvalidConfig, match="disagrees"):
        SyntheticConfig.from_dict(data)


def test_config_save_and_reload(tmp_path: Path) -> None:
    cfg = load_synthetic_config(SYNTHETIC / "c1.json")
    save_synthetic_config(cfg, tmp_path / "c1.json")
    assert np.array_equal(load_synthetic_config(tmp_path / "c1.json").table, cfg.table)


def test_sampling_is_seeded_and_converges() -> None:
    cfg = load_synthetic_config(SYNTHETIC / "c1.json")
    first = sample_synthetic(cfg, 20_000, seed=7)
    assert sample_synthetic(cfg, 200, seed=7) == sample_synthetic(cfg, 200, seed=7)
    assert total_variation(empirical_joint(first, cfg), cfg.table) < 0.05
    with pytest.raises(InvalidConfig):
        sample_synthetic(cfg, 0)


def test_copy_channel_never_samples_off_support() -> None:
    triples = sample_synthetic(copy_channel_config(), 500, seed=1)
    assert all(t.r == t.y and t.b == 0 for t in triples)


def test_exact_bayes_reads_posteriors() -> None:
    scorer = ExactBayesScorer(copy_channel_config())
    labels = ("y0", "y1")
    assert scorer.distribution(_context(0, 1, labels)) == pytest.approx({"y0": 0.0, "y1": 1.0})
    assert scorer.distribution(_context(0, None, labels)) == pytest.approx({"y0": 0.5, "y1": 0.5})
    assert scorer.log_prob(_context(0, 1, labels), "y1") == pytest.approx(0.0)
    assert scorer.log_prob(_context(0, 1, labels), "y0") == pytest.approx(math.log(1e-12))


def test_exact_bayes_falls_back_to_baseline_posterior_off_support() -> None:
    table = np.zeros((1, 3, 2))
    table[0, 0, 0] = 0.5
    table[0, 1, 1] = 0.5
    scorer = ExactBayesScorer(SyntheticConfig("gap", table))
    assert scorer.distribution(_context(0, 2, ("y0", "y1"))) == pytest.approx(
        {"y0": 0.5, "y1": 0.5}
    )


def test_exact_bayes_rejects_foreign_labels_and_contexts() -> None:
    scorer = ExactBayesScorer(copy_channel_config())
    with pytest.raises(UnknownLabel):
        scorer.distribution(_context(0, 0, ("y0", "y2")))
    foreign = ScoringContext("the evidence is r0", None, ("y0", "y1"), "no context token")
    with pytest.raises(InvalidConfig, match="no b-token"):
        scorer.distribution(foreign)


def test_exact_bayes_checkpoint_round_trip(tmp_path: Path) -> None:
    scorer = ExactBayesScorer(load_synthetic_config(SYNTHETIC / "c1.json"))
    save_scorer(scorer, tmp_path / "exact.json")
    reloaded = load_scorer(tmp_path / "exact.json")
    assert isinstance(reloaded, ExactBayesScorer)
    ctx = _context(2, 1, ("y0", "y1", "y2"))
    assert reloaded.distribution(ctx) == pytest.approx(scorer.distribution(ctx))


def test_synthetic_examples_render_triples() -> None:
    cfg = load_synthetic_config(SYNTHETIC / "c1.json")
    triples = sample_synthetic(cfg, 5, seed=2)
    examples, pairs = synthetic_examples(triples, cfg, id_prefix="c1")
    assert [e.id for e in examples] == [f"c1-{i}" for i in range(5)]
    first = examples[0]
    assert first.task is Task.CQA
    assert first.input.question == f"the context is b{triples[0].b}"
    assert first.candidates == ("y0", "y1", "y2")
    assert first.gold_rationale == f"the evidence is r{triples[0].r}"
    assert pairs[0].label == f"y{triples[0].y}"
    assert {p.setting for p in pairs} == {Setting.GOLD}


@pytest.mark.parametrize("name", ["c_copy.json", "c_indep.json", "c1.json"])
def test_exact_cmi_ignores_rationale_relabeling(name: str) -> None:
    cfg = load_synthetic_config(SYNTHETIC / name)
    perm = np.random.default_rng(3).permutation(cfg.sizes[1])
    relabeled = SyntheticConfig(f"{cfg.name}-relabeled", cfg.table[:, perm, :])
    assert exact_cmi(relabeled) == pytest.approx(exact_cmi(cfg), abs=1e-12)


@pytest.mark.slow
def test_empirical_joint_converges_at_full_sample_size() -> None:
    cfg = SyntheticConfig("uniform", np.full((2, 2, 2), 0.125))
    triples = sample_synthetic(cfg, 100_000, seed=11)
    assert total_variation(empirical_joint(triples, cfg), cfg.table) <= 0.01


def test_point_mass_samples_one_triple() -> None:
    table = np.zeros((1, 3, 2))
    table[0, 2, 1] = 1.0
    triples = sample_synthetic(SyntheticConfig("point", table), 50, seed=5)
    assert set(triples) == {triples[0]}
    assert (triples[0].b, triples[0].r, triples[0].y) == (0, 2, 1)
