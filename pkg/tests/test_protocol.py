from __future__ import annotations

import sys
from pathlib import Path

import pytest

from rationale_eval.errors import BackendUnavailable, ConverterUnavailable
from rationale_eval.protocol import CommandClient

ECHO_BACKEND = Path(__file__).parent / "fixtures" / "backends" / "protocol_echo.py"


def _client(mode: str, timeout: str | float | None = None, **kwargs) -> CommandClient:
    return CommandClient.from_config([sys.executable, str(ECHO_BACKEND), mode], timeout, **kwargs)


def test_request_round_trips_one_json_object() -> None:
    response = _client("echo").request({"op": "score", "texts": ["a", "b"]})
    assert response == {"echo": {"op": "score", "texts": ["a", "b"]}}


def test_from_config_splits_command_strings() -> None:
    client = CommandClient.from_config("python -m my_model --fast", "1m")
    assert client.command == ("python", "-m", "my_model", "--fast")
    assert client.to_config() == {"command": ["python", "-m", "my_model", "--fast"], "timeout": 60}


@pytest.mark.parametrize(
    ("mode", "message"),
    [("garbage", "not JSON"), ("list", "JSON object"), ("crash", "unknown mode")],
)
def test_bad_responses_raise_the_configured_error(mode: str, message: str) -> None:
    with pytest.raises(ConverterUnavailable, match=message):
        _client(mode, error_type=ConverterUnavailable).request({})


def test_timeout_and_missing_command() -> None:
    with pytest.raises(BackendUnavailable, match="timed out"):
        _client("sleep", 1).request({})
    with pytest.raises(BackendUnavailable, match="not found"):
        CommandClient.from_config(["definitely-not-a-real-binary-xyz"]).request({})
    with pytest.raises(BackendUnavailable, match="empty command"):
        CommandClient.from_config("")
