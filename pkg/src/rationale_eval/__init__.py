"""Public API for rationale_eval."""

from rationale_eval.baselines import BaselineBuilder, VacuousRationale
from rationale_eval.corpus import Example, RationaleLabelPair, Setting, load_dataset
from rationale_eval.harness import (
    ExperimentConfig,
    oracle_check,
    run_metric_comparison,
    run_sensitivity_sweep,
)
from rationale_eval.metrics import corpus_rev, cvi, las, pointwise_rev, rq
from rationale_eval.scorer import ConditionalLabelScorer, FamilyConfig, train_evaluator
from rationale_eval.server import create_mcp_server
from rationale_eval.synth import ExactBayesScorer, SyntheticConfig
from rationale_eval.tools import MetricToolsBuilder, create_metric_tools

__all__ = [
    "BaselineBuilder",
    "ConditionalLabelScorer",
    "Example",
    "ExactBayesScorer",
    "ExperimentConfig",
    "FamilyConfig",
    "MetricToolsBuilder",
    "RationaleLabelPair",
    "Setting",
    "SyntheticConfig",
    "VacuousRationale",
    "corpus_rev",
    "create_metric_tools",
    "create_mcp_server",
    "cvi",
    "las",
    "load_dataset",
    "oracle_check",
    "pointwise_rev",
    "rq",
    "run_metric_comparison",
    "run_sensitivity_sweep",
    "train_evaluator",
]
