"""Config files, CLI overrides, durations and atomic JSON writes."""

from __future__ import annotations

import hashlib
import json
import re
import tomllib
from collections.abc import Iterable, Mapping
from datetime import timedelta
from pathlib import Path
from typing import Any

from rationale_eval.errors import InvalidConfig

DURATION_RE = re.compile(r"(\d+)([smhd])")
_TOML_SUFFIXES = frozenset({".toml"})


def parse_duration(value: str | float | int) -> timedelta:
    """Parse `"45s"`, `"1m30s"` or a bare number of seconds."""
    if isinstance(value, (int, float)):
        if value <= 0:
            raise InvalidConfig(f"invalid duration: {value!r}")
        return timedelta(seconds=float(value))
    pos = 0
    total = timedelta()
    for match in DURATION_RE.finditer(value):
        if match.start() != pos:
            raise InvalidConfig(f"invalid duration: {value!r}")
        amount = int(match.group(1))
        unit = match.group(2)
        if unit == "s":
            total += timedelta(seconds=amount)
        elif unit == "m":
            total += timedelta(minutes=amount)
        elif unit == "h":
            total += timedelta(hours=amount)
        elif unit == "d":
            total += timedelta(days=amount)
        pos = match.end()
    if pos != len(value) or total <= timedelta(0):
        raise InvalidConfig(f"invalid duration: {value!r}")
    return total


def coerce_cli_value(raw: str) -> Any:
    """Coerce a CLI token to a JSON scalar when possible."""
    lowered = raw.lower()
    if lowered == "true":
        return True
    if lowered == "false":
        return False
    if lowered in {"none", "null"}:
        return None
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_overrides(tokens: Iterable[str]) -> dict[str, Any]:
    """Parse `dotted.key=value` tokens into a flat mapping."""
    parsed: dict[str, Any] = {}
    for token in tokens:
        if "=" not in token:
            raise InvalidConfig(f"[config] override must look like key=value: {token!r}")
        key, raw_value = token.split("=", 1)
        key = key.strip().replace("-", "_")
        if not key:
            raise InvalidConfig(f"[config] empty override key in {token!r}")
        parsed[key] = coerce_cli_value(raw_value)
    return parsed


def apply_overrides(data: Mapping[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    """Return a deep copy of `data` with dotted-key overrides applied."""
    merged: dict[str, Any] = json.loads(json.dumps(data))
    for dotted, value in overrides.items():
        node = merged
        parts = dotted.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise InvalidConfig(f"[config] cannot override below scalar key {part!r}")
            node = child
        node[parts[-1]] = value
    return merged


def load_config_file(path: Path) -> dict[str, Any]:
    """Load a JSON or TOML config file, chosen by suffix."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file does not exist: {path}")
    if path.suffix.lower() in _TOML_SUFFIXES:
        with path.open("rb") as f:
            data = tomllib.load(f)
    else:
        with path.open("r", encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as exc:
                raise InvalidConfig(f"[config] {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidConfig(f"[config] {path}: top level must be an object")
    return data


def canonical_json(data: Any) -> str:
    return json.dumps(data, ensure_ascii=True, sort_keys=True, separators=(",", ":"))


def config_hash(data: Any) -> str:
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def stable_hash(*parts: str) -> str:
    """Hex digest of NUL-joined parts; stable across processes, unlike `hash()`."""
    return hashlib.sha256("\0".join(parts).encode("utf-8")).hexdigest()


def write_json_atomic(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        with tmp.open("w", encoding="utf-8") as f:
            json.dump(payload, f, ensure_ascii=True, indent=2, sort_keys=True)
            f.write("\n")
        tmp.replace(path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def write_lines_atomic(path: Path, lines: Iterable[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        with tmp.open("w", encoding="utf-8", newline="") as f:
            for line in lines:
                f.write(line)
                f.write("\n")
        tmp.replace(path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
