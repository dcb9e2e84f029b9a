"""One-request/one-response JSON protocol over an external command.

The converter adapter, the seq2seq scorer adapter and remote task-model backends all
talk to their model process the same way: the command is started, one JSON object is
written to its stdin, and exactly one JSON object is expected on stdout.
"""

from __future__ import annotations

import json
import logging
import shlex
import subprocess
from collections.abc import Sequence
from dataclasses import dataclass, field
from datetime import timedelta
from typing import Any

from rationale_eval.config import parse_duration
from rationale_eval.errors import BackendUnavailable, RationaleEvalError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CommandClient:
    command: tuple[str, ...]
    timeout: timedelta | None = None
    error_type: type[RationaleEvalError] = field(default=BackendUnavailable)

    @classmethod
    def from_config(
        cls,
        command: str | Sequence[str],
        timeout: str | float | None = None,
        error_type: type[RationaleEvalError] = BackendUnavailable,
    ) -> CommandClient:
        argv = tuple(shlex.split(command)) if isinstance(command, str) else tuple(command)
        if not argv:
            raise error_type("[protocol] empty command")
        return cls(
            command=argv,
            timeout=parse_duration(timeout) if timeout is not None else None,
            error_type=error_type,
        )

    def request(self, payload: dict[str, Any]) -> dict[str, Any]:
        body = json.dumps(payload, ensure_ascii=True, sort_keys=True)
        logger.debug("request to %s: %d bytes", self.command[0], len(body))
        try:
            result = subprocess.run(
                list(self.command),
                input=body,
                capture_output=True,
                text=True,
                shell=False,
                check=False,
                timeout=self.timeout.total_seconds() if self.timeout else None,
            )
        except FileNotFoundError as exc:
            raise self.error_type(f"[protocol] command not found: {self.command[0]}") from exc
        except subprocess.TimeoutExpired as exc:
            raise self.error_type(
                f"[protocol] command timed out after {exc.timeout}s: {self.command[0]}"
            ) from exc
        if result.returncode != 0:
            raise self.error_type(
                f"[protocol] command failed ({self.command[0]}): "
                f"{result.stderr.strip() or result.stdout.strip()}"
            )
        try:
            response = json.loads(result.stdout)
        except json.JSONDecodeError as exc:
            raise self.error_type(
                f"[protocol] response is not JSON ({self.command[0]}): {result.stdout[:200]!r}"
            ) from exc
        if not isinstance(response, dict):
            raise self.error_type(f"[protocol] response must be a JSON object: {response!r}")
        return response

    def to_config(self) -> dict[str, Any]:
        return {
            "command": list(self.command),
            "timeout": self.timeout.total_seconds() if self.timeout else None,
        }
