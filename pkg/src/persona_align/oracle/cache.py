"""Append-only on-disk response cache wrapping any oracle."""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path

from ..errors import ConfigError
from ..records import dumps
from .base import Prompt, oracle_key


class CachedOracle:
    """Serves repeated prompts from a JSONL file of ``{"key", "response"}`` lines.

    Keys are SHA-256 digests of (model name, temperature, system text, user
    text).  New responses are appended and fsynced before being returned.
    """

    def __init__(self, inner, cache_path):
        self.inner = inner
        self.path = Path(cache_path)
        self._lock = threading.Lock()
        self._store: dict[str, str] = {}
        self.hits = 0
        self.misses = 0
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8"):
                pass
        except OSError as exc:
            raise ConfigError(f"cache path {self.path} is not writable: {exc}") from None
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = json.loads(line)
                except json.JSONDecodeError:
                    # torn final write from an interrupted run
                    continue
                self._store[entry["key"]] = entry["response"]

    @property
    def identity(self) -> dict:
        return self.inner.identity

    # a cached answer never changes once stored
    deterministic = True

    def __len__(self) -> int:
        return len(self._store)

    def complete(self, prompt: Prompt) -> str:
        key = oracle_key(self.inner, prompt)
        with self._lock:
            if key in self._store:
                self.hits += 1
                return self._store[key]
        response = self.inner.complete(prompt)
        with self._lock:
            if key in self._store:
                self.hits += 1
                return self._store[key]
            self.misses += 1
            self._store[key] = response
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(dumps({"key": key, "response": response}) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        return response


def cached(oracle, cache_path) -> CachedOracle:
    return CachedOracle(oracle, cache_path)
