"""Chat-completion client with retries, bounded concurrency, and a
record/replay cassette for offline runs.

The transport speaks the OpenAI-compatible POST {endpoint}/chat/completions
protocol via ``requests``; anything else (retry policy, cassette lookup,
batching) is transport-agnostic, so tests swap in scripted fakes.

Cassette entries are keyed by a content hash over (system, user, model_name,
thinking_level, temperature): exactly the fields that change model output at
temperature 0.  Files are append-only JSONL so committed fixtures diff
cleanly; in record mode the client checks the cassette before the network,
which is what makes interrupted runs resumable.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

THINKING_LEVELS = ("none", "low", "medium", "high")
API_KEY_ENV = "JUDGE_API_KEY"
_BACKOFF_BASE_SECONDS = 0.5


class JudgeError(RuntimeError):
    """Judge call failure after retries (or a cassette miss in replay)."""

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class TransportError(RuntimeError):
    def __init__(self, message: str, retryable: bool, status: int | None = None):
        super().__init__(message)
        self.retryable = retryable
        self.status = status


@dataclass(frozen=True)
class ModelConfig:
    endpoint: str = ""
    model_name: str = "stub"
    thinking_level: str = "none"
    temperature: float = 0.0
    max_output_tokens: int = 4096
    timeout: float = 120.0
    max_retries: int = 3

    def __post_init__(self) -> None:
        if self.thinking_level not in THINKING_LEVELS:
            raise ValueError(f"thinking_level must be one of {THINKING_LEVELS}, got {self.thinking_level!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")

    def to_json_dict(self) -> dict:
        return {
            "endpoint": self.endpoint,
            "model_name": self.model_name,
            "thinking_level": self.thinking_level,
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
            "timeout": self.timeout,
            "max_retries": self.max_retries,
        }


@dataclass(frozen=True)
class JudgeRequest:
    user: str
    config: ModelConfig
    system: str | None = None
    tag: str = ""


@dataclass
class JudgeResponse:
    raw_text: str
    usage: dict = field(default_factory=dict)
    latency: float = 0.0
    attempts: int = 0
    error: str | None = None
    from_cache: bool = False

    @property
    def ok(self) -> bool:
        return self.error is None


def cassette_key(request: JudgeRequest) -> str:
    """Content hash over the fields that determine a deterministic response."""
    payload = {
        "system": request.system,
        "user": request.user,
        "model_name": request.config.model_name,
        "thinking_level": request.config.thinking_level,
        "temperature": request.config.temperature,
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Cassette:
    """Append-only JSONL store of {"key", "request", "response_text"} rows."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, str] = {}
        if self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    row = json.loads(line)
                    self._entries[row["key"]] = row["response_text"]

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> str | None:
        return self._entries.get(key)

    def put(self, key: str, request_payload: Mapping, response_text: str) -> None:
        row = {"key": key, "request": dict(request_payload), "response_text": response_text}
        with self._lock:
            self._entries[key] = response_text
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8", newline="\n") as fh:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")


class HttpTransport:
    """One-shot POST to {endpoint}/chat/completions; retry policy lives in the client."""

    def __init__(self, api_key: str | None = None):
        import requests

        self._requests = requests
        self._session = requests.Session()
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)

    def send(self, request: JudgeRequest) -> tuple[str, dict]:
        config = request.config
        if not config.endpoint:
            raise TransportError("no endpoint configured", retryable=False)
        messages = []
        if request.system is not None:
            messages.append({"role": "system", "content": request.system})
        messages.append({"role": "user", "content": request.user})
        body: dict = {
            "model": config.model_name,
            "messages": messages,
            "temperature": config.temperature,
            "max_tokens": config.max_output_tokens,
        }
        if config.thinking_level != "none":
            body["reasoning_effort"] = config.thinking_level
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = config.endpoint.rstrip("/") + "/chat/completions"
        try:
            http_response = self._session.post(url, json=body, headers=headers, timeout=config.timeout)
        except (self._requests.Timeout, self._requests.ConnectionError) as exc:
            raise TransportError(f"transport failure: {exc}", retryable=True) from exc
        if http_response.status_code == 429 or http_response.status_code >= 500:
            raise TransportError(
                f"HTTP {http_response.status_code}", retryable=True, status=http_response.status_code
            )
        if http_response.status_code != 200:
            raise TransportError(
                f"HTTP {http_response.status_code}: {http_response.text[:500]}",
                retryable=False,
                status=http_response.status_code,
            )
        try:
            payload = http_response.json()
            text = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload: {exc}", retryable=False) from exc
        usage = payload.get("usage") or {}
        return text, usage


class JudgeClient:
    """Completion front end: cassette first, then transport with retries.

    Modes: replay (cassette only, misses are errors), record (cassette
    read-through, misses go to the transport and are appended), live
    (transport only).
    """

    def __init__(
        self,
        transport: object | None = None,
        cassette: Cassette | str | Path | None = None,
        record: bool = False,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        if isinstance(cassette, (str, Path)):
            cassette = Cassette(cassette)
        self.cassette = cassette
        self.transport = transport
        self.record = record
        self._sleep = sleeper
        if cassette is None and transport is None:
            raise ValueError("need a transport, a cassette, or both")

    def complete(self, request: JudgeRequest) -> JudgeResponse:
        key = cassette_key(request)
        if self.cassette is not None:
            cached = self.cassette.get(key)
            if cached is not None:
                return JudgeResponse(raw_text=cached, attempts=0, from_cache=True)
            if self.transport is None or not self.record:
                raise JudgeError(f"cassette miss for key {key} (replay mode)")
        if self.transport is None:
            raise JudgeError(f"cassette miss for key {key} and no transport")

        config = request.config
        started = time.monotonic()
        last_error: TransportError | None = None
        for attempt in range(1, config.max_retries + 2):
            try:
                text, usage = self.transport.send(request)
            except TransportError as exc:
                last_error = exc
                if exc.retryable and attempt <= config.max_retries:
                    self._sleep(_BACKOFF_BASE_SECONDS * 2 ** (attempt - 1))
                    continue
                raise JudgeError(f"judge call failed after {attempt} attempts: {exc}", attempts=attempt) from exc
            latency = time.monotonic() - started
            if self.cassette is not None and self.record:
                payload = {
                    "system": request.system,
                    "user": request.user,
                    "model_name": config.model_name,
                    "thinking_level": config.thinking_level,
                    "temperature": config.temperature,
                }
                self.cassette.put(key, payload, text)
            return JudgeResponse(raw_text=text, usage=dict(usage), latency=latency, attempts=attempt)
        raise JudgeError(
            f"judge call failed after {config.max_retries + 1} attempts: {last_error}",
            attempts=config.max_retries + 1,
        )

    def complete_settled(self, request: JudgeRequest) -> JudgeResponse:
        try:
            return self.complete(request)
        except JudgeError as exc:
            return JudgeResponse(raw_text="", attempts=exc.attempts, error=str(exc))
        except Exception as exc:  # transport bugs must not abort the batch
            return JudgeResponse(raw_text="", attempts=0, error=f"{type(exc).__name__}: {exc}")

    def complete_batch(self, requests: Sequence[JudgeRequest], max_in_flight: int = 4) -> list[JudgeResponse]:
        """Complete all requests; results are in input order, errors included."""
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")
        if not requests:
            return []
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            futures = [pool.submit(self.complete_settled, request) for request in requests]
            return [future.result() for future in futures]
