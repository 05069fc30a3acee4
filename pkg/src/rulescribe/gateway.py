"""Uniform chat-completion access: live HTTP with retries and bounded
concurrency, plus deterministic record/replay fixtures for tests.

Fixture store layout: one JSON file per content-hash key,
`<hash>.json = {"prompt": ..., "config": {...}, "completion": ...}`.
The key hashes the UTF-8 prompt bytes, the model name, and the temperature,
so replay needs no network and is stable across platforms. When the same
key is recorded more than once (the judge scores one prompt three times),
`completion` becomes a JSON array appended in call order; replay consumes
the entries sequentially and clamps at the last one.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import urlparse

import requests

MODES = ("live", "record", "replay")


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    """Transient or exhausted-retries transport failure."""


class MissingFixtureError(GatewayError):
    def __init__(self, key: str):
        super().__init__(f"missing fixture {key}")
        self.key = key


@dataclass(frozen=True)
class ModelConfig:
    model_name: str
    endpoint: str = ""
    temperature: float = 0.0
    max_tokens: int = 512
    api_key_env: str = ""
    min_interval_s: float = 0.0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.endpoint:
            parsed = urlparse(self.endpoint)
            if not (parsed.scheme and parsed.netloc):
                raise ValueError(f"invalid endpoint URL {self.endpoint!r}")


@dataclass
class Completion:
    text: str
    model_name: str
    latency_s: float
    token_usage: dict | None = None
    fixture_key: str | None = None


def fixture_key(prompt: str, config: ModelConfig) -> str:
    """Stable content-hash key: UTF-8 prompt bytes + model name + temperature."""
    h = hashlib.sha256()
    h.update(prompt.encode("utf-8"))
    h.update(b"\x1f")
    h.update(config.model_name.encode("utf-8"))
    h.update(b"\x1f")
    h.update(repr(float(config.temperature)).encode("ascii"))
    return h.hexdigest()


def _default_transport(url: str, payload: dict, headers: dict, timeout: float) -> dict:
    try:
        resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    except requests.RequestException as err:
        raise TransportError(f"request failed: {err}") from err
    if resp.status_code == 429 or resp.status_code >= 500:
        raise TransportError(f"transient HTTP {resp.status_code}")
    if resp.status_code >= 400:
        raise GatewayError(f"HTTP {resp.status_code}: {resp.text[:200]}")
    return resp.json()


class LlmGateway:
    """Thread-safe gateway. At most `max_in_flight` live requests run
    concurrently; fixture writes are single-writer, reads unrestricted."""

    def __init__(
        self,
        mode: str = "replay",
        fixture_dir: str | Path | None = None,
        max_in_flight: int = 4,
        max_retries: int = 3,
        transport=None,
        sleeper=time.sleep,
    ):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        if mode in ("record", "replay") and fixture_dir is None:
            raise ValueError(f"mode {mode!r} requires a fixture directory")
        self.mode = mode
        self.fixture_dir = Path(fixture_dir) if fixture_dir is not None else None
        self.max_retries = max_retries
        self._transport = transport or _default_transport
        self._sleep = sleeper
        self._in_flight = threading.Semaphore(max_in_flight)
        self._write_lock = threading.Lock()
        self._cursor_lock = threading.Lock()
        self._cursors: dict[str, int] = {}
        self._last_call: dict[str, float] = {}

    # -- fixtures ----------------------------------------------------------

    def _fixture_path(self, key: str) -> Path:
        assert self.fixture_dir is not None
        return self.fixture_dir / f"{key}.json"

    def _replay(self, key: str, config: ModelConfig) -> Completion:
        path = self._fixture_path(key)
        if not path.exists():
            raise MissingFixtureError(key)
        data = json.loads(path.read_text("utf-8"))
        completion = data["completion"]
        if isinstance(completion, list):
            with self._cursor_lock:
                idx = self._cursors.get(key, 0)
                self._cursors[key] = idx + 1
            text = completion[min(idx, len(completion) - 1)]
        else:
            text = completion
        return Completion(text=text, model_name=config.model_name, latency_s=0.0, fixture_key=key)

    def _record(self, key: str, prompt: str, config: ModelConfig, text: str) -> None:
        path = self._fixture_path(key)
        with self._write_lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            if path.exists():
                data = json.loads(path.read_text("utf-8"))
                existing = data["completion"]
                data["completion"] = (existing if isinstance(existing, list) else [existing]) + [text]
            else:
                data = {
                    "prompt": prompt,
                    "config": {"model_name": config.model_name, "temperature": config.temperature},
                    "completion": text,
                }
            path.write_text(json.dumps(data, ensure_ascii=False, indent=1), "utf-8")

    # -- live calls ----------------------------------------------------------

    def _headers(self, config: ModelConfig) -> dict:
        headers = {"Content-Type": "application/json"}
        if config.api_key_env:
            key = os.environ.get(config.api_key_env)
            if not key:
                raise GatewayError(f"environment variable {config.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _throttle(self, config: ModelConfig) -> None:
        if config.min_interval_s <= 0:
            return
        with self._cursor_lock:
            last = self._last_call.get(config.model_name, 0.0)
            wait = last + config.min_interval_s - time.monotonic()
            self._last_call[config.model_name] = max(time.monotonic(), last + config.min_interval_s)
        if wait > 0:
            self._sleep(wait)

    def _live(self, prompt: str, config: ModelConfig) -> Completion:
        if not config.endpoint:
            raise GatewayError("live mode requires an endpoint")
        payload = {
            "model": config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": config.temperature,
            "max_tokens": config.max_tokens,
        }
        headers = self._headers(config)
        last_err: Exception | None = None
        for attempt in range(1 + self.max_retries):
            if attempt:
                self._sleep(0.5 * 2 ** (attempt - 1))
            self._throttle(config)
            started = time.monotonic()
            try:
                with self._in_flight:
                    data = self._transport(config.endpoint, payload, headers, 60.0)
            except TransportError as err:
                last_err = err
                continue
            try:
                text = data["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as err:
                raise GatewayError(f"malformed completion response: {err}") from err
            if not text:
                last_err = TransportError("empty completion text")
                continue
            return Completion(
                text=text,
                model_name=config.model_name,
                latency_s=time.monotonic() - started,
                token_usage=data.get("usage"),
            )
        raise TransportError(f"retries exhausted: {last_err}")

    # -- entry point ----------------------------------------------------------

    def complete(self, prompt: str, config: ModelConfig) -> Completion:
        key = fixture_key(prompt, config)
        if self.mode == "replay":
            return self._replay(key, config)
        completion = self._live(prompt, config)
        if self.mode == "record":
            self._record(key, prompt, config, completion.text)
            completion.fixture_key = key
        return completion
