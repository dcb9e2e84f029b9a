from __future__ import annotations

import json
from datetime import timedelta
from pathlib import Path

import pytest

from rationale_eval.config import (
    apply_overrides,
    coerce_cli_value,
    config_hash,
    load_config_file,
    parse_duration,
    parse_overrides,
    stable_hash,
    write_json_atomic,
    write_lines_atomic,
)
from rationale_eval.errors import InvalidConfig


@pytest.mark.parametrize("raw", ["", "0s", "10", "1x", "1m-2s", "m10"])
def test_parse_duration_rejects_invalid(raw: str) -> None:
    with pytest.raises(ValueError, match="invalid duration"):
        parse_duration(raw)


def test_parse_duration_compound_and_numeric() -> None:
    assert parse_duration("1m30s") == timedelta(seconds=90)
    assert parse_duration("2h") == timedelta(hours=2)
    assert parse_duration(2.5) == timedelta(seconds=2.5)


@pytest.mark.parametrize(
    ("raw", "expected"),
    [("true", True), ("False", False), ("null", None), ("3", 3), ("0.5", 0.5), ("[1, 2]", [1, 2]),
     ("token-set", "token-set")],
)
def test_coerce_cli_value(raw: str, expected: object) -> None:
    assert coerce_cli_value(raw) == expected


def test_overrides_apply_to_nested_keys() -> None:
    overrides = parse_overrides(["evaluator.alpha=0.5", "seeds=[1,2]", "name=demo"])
    merged = apply_overrides({"evaluator": {"family": "tabular"}, "seeds": [0]}, overrides)
    assert merged == {
        "evaluator": {"family": "tabular", "alpha": 0.5},
        "seeds": [1, 2],
        "name": "demo",
    }


def test_overrides_reject_malformed_tokens() -> None:
    with pytest.raises(InvalidConfig, match="key=value"):
        parse_overrides(["evaluator.alpha"])
    with pytest.raises(InvalidConfig, match="below scalar"):
        apply_overrides({"name": "x"}, {"name.inner": 1})


def test_load_config_file_json_and_toml(tmp_path: Path) -> None:
    json_path = tmp_path / "exp.json"
    json_path.write_text(json.dumps({"name": "a", "seeds": [0, 1]}), encoding="utf-8")
    toml_path = tmp_path / "exp.toml"
    toml_path.write_text('name = "a"\nseeds = [0, 1]\n', encoding="utf-8")
    assert load_config_file(json_path) == load_config_file(toml_path)

    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(InvalidConfig, match="top level"):
        load_config_file(bad)
    with pytest.raises(FileNotFoundError):
        load_config_file(tmp_path / "missing.json")


def test_config_hash_ignores_key_order() -> None:
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert stable_hash("q", "a") != stable_hash("qa")


def test_atomic_writes_leave_no_temp_files(tmp_path: Path) -> None:
    write_json_atomic(tmp_path / "out" / "payload.json", {"b": 1, "a": 2})
    write_lines_atomic(tmp_path / "out" / "lines.txt", ["x", "y"])
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["lines.txt", "payload.json"]
    assert json.loads((tmp_path / "out" / "payload.json").read_text()) == {"a": 2, "b": 1}
    assert (tmp_path / "out" / "lines.txt").read_text() == "x\ny\n"


def test_atomic_writes_leave_no_temporary_file_on_failure(tmp_path: Path) -> None:
    target = tmp_path / "payload.json"
    with pytest.raises(TypeError):
        write_json_atomic(target, {"value": object()})
    assert list(tmp_path.iterdir()) == []

    def broken_lines():
        yield "first"
        raise RuntimeError("generator failed")

    with pytest.raises(RuntimeError):
        write_lines_atomic(tmp_path / "lines.txt", broken_lines())
    assert list(tmp_path.iterdir()) == []
