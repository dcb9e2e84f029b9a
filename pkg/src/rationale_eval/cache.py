"""Persistent key/value cache for converter responses.

Entries are line-delimited JSON (`{"key": ..., "value": ...}`), or rows in a sqlite3
table when the cache path ends in `.db`, `.sqlite` or `.sqlite3`.
"""

from __future__ import annotations

import json
import logging
import sqlite3
import threading
from pathlib import Path

logger = logging.getLogger(__name__)

_SQLITE_SUFFIXES = frozenset({".db", ".sqlite", ".sqlite3"})


def _ensure_sqlite_schema(conn: sqlite3.Connection) -> None:
    conn.execute(
        """
        CREATE TABLE IF NOT EXISTS cache_entry (
            cache_key TEXT PRIMARY KEY,
            value_json TEXT NOT NULL
        )
        """
    )


class ResponseCache:
    """Thread-safe cache; the in-memory view is loaded once and kept in sync on writes."""

    def __init__(self, path: Path | None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._entries: dict[str, str] = self._load()

    @property
    def uses_sqlite(self) -> bool:
        return self.path is not None and self.path.suffix.lower() in _SQLITE_SUFFIXES

    def _load(self) -> dict[str, str]:
        if self.path is None or not self.path.exists():
            return {}
        if self.uses_sqlite:
            with sqlite3.connect(self.path) as conn:
                _ensure_sqlite_schema(conn)
                rows = conn.execute("SELECT cache_key, value_json FROM cache_entry").fetchall()
            return {key: json.loads(value) for key, value in rows}
        entries: dict[str, str] = {}
        with self.path.open("r", encoding="utf-8") as f:
            for raw in f:
                if raw.strip():
                    record = json.loads(raw)
                    entries[str(record["key"])] = record["value"]
        return entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> str | None:
        with self._lock:
            value = self._entries.get(key)
        logger.debug("cache %s for %s", "hit" if value is not None else "miss", key[:12])
        return value

    def put(self, key: str, value: str) -> None:
        with self._lock:
            if self._entries.get(key) == value:
                return
            self._entries[key] = value
            if self.path is None:
                return
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if self.uses_sqlite:
                with sqlite3.connect(self.path) as conn:
                    _ensure_sqlite_schema(conn)
                    conn.execute(
                        "INSERT OR REPLACE INTO cache_entry (cache_key, value_json) VALUES (?, ?)",
                        (key, json.dumps(value, ensure_ascii=True)),
                    )
                return
            with self.path.open("a", encoding="utf-8") as f:
                f.write(json.dumps({"key": key, "value": value}, ensure_ascii=False) + "\n")
