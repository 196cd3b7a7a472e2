"""Append-only event log backing session persistence.

Each session mutation is one JSON line (created / message / decision);
startup replays the log to reconstruct every session exactly. Appends are
flushed and fsynced so a crash never loses an acknowledged event, and a
torn trailing line from a crash mid-write is skipped on replay.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path


class EventStore:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, event: dict) -> None:
        line = json.dumps(event, ensure_ascii=False, sort_keys=True)
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())

    def replay(self) -> list[dict]:
        if not self.path.exists():
            return []
        events = []
        with self.path.open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                try:
                    events.append(json.loads(line))
                except json.JSONDecodeError:
                    continue  # torn write at crash time
        return events
