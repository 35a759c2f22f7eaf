"""Single-file JSON document stores, one per entity type.

Readers get a deep copy of the current snapshot; writers are serialized by a
per-store lock and replace the file atomically, so a crash mid-write leaves
the previous version intact.
"""

from __future__ import annotations

import copy
import json
import os
import tempfile
import threading
from pathlib import Path
from typing import Any, Callable


class JsonStore:
    def __init__(self, path: str | os.PathLike | None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.RLock()
        self._data: dict[str, Any] = {}
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                self._data = json.load(fh)

    def snapshot(self) -> dict[str, Any]:
        with self._lock:
            return copy.deepcopy(self._data)

    def get(self, key: str, default=None):
        with self._lock:
            value = self._data.get(key, default)
            return copy.deepcopy(value)

    def __contains__(self, key: str) -> bool:
        with self._lock:
            return key in self._data

    def keys(self) -> list[str]:
        with self._lock:
            return list(self._data)

    def raw_bytes(self) -> bytes:
        with self._lock:
            return self._dump(self._data)

    def update(self, fn: Callable[[dict[str, Any]], Any]):
        """Apply ``fn`` to a working copy; commit only if it returns normally."""
        with self._lock:
            work = copy.deepcopy(self._data)
            result = fn(work)
            self._write(work)
            self._data = work
            return result

    def put(self, key: str, value) -> None:
        self.update(lambda d: d.__setitem__(key, value))

    def delete(self, key: str) -> None:
        self.update(lambda d: d.pop(key, None))

    @property
    def lock(self) -> threading.RLock:
        return self._lock

    @staticmethod
    def _dump(data) -> bytes:
        return json.dumps(data, indent=2, sort_keys=True).encode("utf-8") + b"\n"

    def _write(self, data) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.path.parent, prefix=self.path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(self._dump(data))
            os.replace(tmp, self.path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
