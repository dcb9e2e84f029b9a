from __future__ import annotations

import math
from pathlib import Path

import pytest

from rationale_eval.errors import InvalidConfig, MissingField
from rationale_eval.tools import MetricToolsBuilder, create_metric_tools, get_tool

SYNTHETIC = Path(__file__).parent / "fixtures" / "synthetic"
MUSHROOM = {
    "id": "m1",
    "question": "Where can personal mushrooms be kept fresh?",
    "choices": ["stove", "refrigerator", "farmer's market"],
    "gold_label": "refrigerator",
    "gold_rationale": "Refrigerator is used to keep food fresh.",
}


def test_builder_exposes_every_tool_with_metadata_suffix() -> None:
    tools = MetricToolsBuilder().build_callable_tools()
    assert set(tools) == set(MetricToolsBuilder.TOOL_NAMES)
    for name, (func, description) in tools.items():
        assert func.__name__ == name
        assert "Exposed tools:" in description
        assert "Evaluator families: tabular" in description
        assert "ECQA" in description


def test_oracle_check_tool_accepts_name_path_and_table() -> None:
    builder = MetricToolsBuilder()
    by_name = builder.oracle_check("c_copy", n=200)
    assert by_name["status"] == "pass"
    assert by_name["corpus_rev"] == pytest.approx(math.log(2))
    by_path = builder.oracle_check(str(SYNTHETIC / "c_indep.json"), n=500)
    assert by_path["exact_cmi"] == pytest.approx(0.0, abs=1e-12)
    table = {"name": "inline", "sizes": {"b": 1, "r": 2, "y": 2},
             "table": [[[0.5, 0.0], [0.0, 0.5]]]}
    assert builder.oracle_check(table, n=100)["name"] == "inline"


def test_build_baseline_tool_returns_vacuous_rationale() -> None:
    baseline = MetricToolsBuilder().build_baseline(MUSHROOM, "stove")
    assert baseline["label_used"] == "stove"
    assert "stove" in baseline["text"]
    assert baseline["source_example_id"] == "m1"


def test_serialize_tool_renders_input_and_target() -> None:
    builder = MetricToolsBuilder()
    rendered = builder.serialize(MUSHROOM, "X->RY")
    assert rendered["input"].endswith("[choice] farmer's market [rationale]")
    assert rendered["target"] == (
        "Refrigerator is used to keep food fresh. [answer] refrigerator <eos>"
    )
    no_rationale = {key: value for key, value in MUSHROOM.items() if key != "gold_rationale"}
    assert builder.serialize(no_rationale, "X->YR")["target"] is None


def test_serialize_tool_surfaces_typed_errors() -> None:
    with pytest.raises(MissingField):
        MetricToolsBuilder().serialize({**MUSHROOM, "choices": []}, "X->YR")
    with pytest.raises(InvalidConfig):
        MetricToolsBuilder().serialize(MUSHROOM, "Y*R*")


@pytest.mark.parametrize(
    ("rev", "expected"),
    [
        (0.5, "SUPPORTS_WITH_NEW_INFO"),
        (5e-7, "NO_NEW_INFO"),
        (-0.5, "CONTRARY_INFO"),
    ],
)
def test_interpret_sign_tool(rev: float, expected: str) -> None:
    assert get_tool("interpret_sign")(rev) == expected


def test_interpret_sign_tool_respects_epsilon() -> None:
    assert create_metric_tools()["interpret_sign"][0](0.05, epsilon=0.1) == "NO_NEW_INFO"


def test_get_tool_rejects_unknown_name() -> None:
    with pytest.raises(InvalidConfig, match="unknown tool"):
        get_tool("generate_pairs")  # type: ignore[arg-type]


def test_refresh_rebinds_instance_callables() -> None:
    builder = MetricToolsBuilder(auto_build=False)
    assert builder._callable_tools is None
    tools = builder.refresh()
    assert builder.__dict__["interpret_sign"] is tools["interpret_sign"][0]
