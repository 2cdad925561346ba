"""Chat-completions client with retries and a cap on in-flight requests."""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass

import httpx

from ..errors import ConfigError, ResponseFormatError, TransportError
from .base import Prompt

log = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "PERSONA_ALIGN_API_KEY"
_RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class OracleConfig:
    endpoint_url: str = "https://api.openai.com/v1/chat/completions"
    model_name: str = "gpt-4o"
    temperature: float = 0.0
    max_retries: int = 3
    request_timeout: float = 60.0
    max_parallel_requests: int = 4
    api_key_env: str = DEFAULT_API_KEY_ENV
    backoff_seconds: float = 1.0

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.request_timeout <= 0:
            raise ConfigError("request_timeout must be positive")
        if self.max_parallel_requests < 1:
            raise ConfigError("max_parallel_requests must be >= 1")


class HttpChatOracle:
    """Sends ``system`` + ``user`` messages to a chat-completions endpoint.

    The API key is read from the environment variable named in the config at
    construction time and is never written anywhere.
    """

    def __init__(self, config: OracleConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        key = os.environ.get(config.api_key_env)
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(headers=headers, timeout=config.request_timeout, transport=transport)
        self._slots = threading.BoundedSemaphore(config.max_parallel_requests)
        self._lock = threading.Lock()
        self.request_count = 0
        self.in_flight = 0
        self.max_in_flight = 0

    @property
    def identity(self) -> dict:
        return {"kind": "http", "model_name": self.config.model_name,
                "temperature": self.config.temperature, "endpoint_url": self.config.endpoint_url}  # fmt: skip

    @property
    def deterministic(self) -> bool:
        return False

    def _post(self, body: dict) -> httpx.Response:
        with self._slots:
            with self._lock:
                self.request_count += 1
                self.in_flight += 1
                self.max_in_flight = max(self.max_in_flight, self.in_flight)
            try:
                return self._client.post(self.config.endpoint_url, json=body)
            finally:
                with self._lock:
                    self.in_flight -= 1

    def complete(self, prompt: Prompt) -> str:
        body = {
            "model": self.config.model_name,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text},
            ],
        }
        last = "no attempt made"
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(self.config.backoff_seconds * 2 ** (attempt - 1))
            try:
                resp = self._post(body)
            except httpx.HTTPError as exc:
                last = f"{type(exc).__name__}: {exc}"
                log.warning("oracle request failed (attempt %d): %s", attempt + 1, last)
                continue
            if resp.status_code in _RETRYABLE_STATUS:
                last = f"HTTP {resp.status_code}"
                log.warning("oracle request got %s (attempt %d)", last, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                raise ResponseFormatError("response is not a chat completion", resp.text) from None
        raise TransportError(f"giving up after {self.config.max_retries + 1} attempts: {last}")

    def close(self) -> None:
        self._client.close()
