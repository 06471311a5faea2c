"""Persistent JSON cache: one file per (source, key), addressed by digest."""

from __future__ import annotations

import hashlib
import json
import os
import threading
from collections import defaultdict
from pathlib import Path
from typing import Any, Optional, Union


class JsonCache:
    """Writes are serialized per key; reads never lock.

    File contents are canonical JSON, so replaying the same query sequence
    leaves a byte-identical directory.
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._guard = threading.Lock()

    @staticmethod
    def address(source: str, key: str) -> str:
        return hashlib.sha256(f"{source}\x1f{key}".encode("utf-8")).hexdigest()

    def path(self, source: str, key: str) -> Path:
        return self.root / source / f"{self.address(source, key)}.json"

    def get(self, source: str, key: str) -> Optional[Any]:
        path = self.path(source, key)
        if not path.is_file():
            return None
        return json.loads(path.read_text(encoding="utf-8"))["payload"]

    def put(self, source: str, key: str, payload: Any) -> Path:
        address = self.address(source, key)
        with self._guard:
            lock = self._locks[address]
        path = self.path(source, key)
        body = json.dumps({"key": key, "payload": payload, "source": source}, indent=2, sort_keys=True,
                          ensure_ascii=False) + "\n"
        with lock:
            if path.is_file() and path.read_text(encoding="utf-8") == body:
                return path
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(f".{os.getpid()}.{threading.get_ident()}.tmp")
            tmp.write_text(body, encoding="utf-8")
            os.replace(tmp, path)
        return path
