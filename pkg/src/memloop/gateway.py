"""All generative-model calls go through :class:`Gateway`.

Backends:

* :class:`RemoteBackend` - OpenAI-compatible ``/chat/completions`` over HTTP.
* :class:`ReplayBackend` - answers from a JSON-lines replay file keyed by request digest.
* :class:`RecordingBackend` - forwards to another backend and appends replay entries.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol, Union

import httpx

logger = logging.getLogger(__name__)

ROLE_TAGS = (
    "challenger",
    "evaluator_answer",
    "evaluator_judge",
    "adapter_strategy",
    "adapter_content",
    "memory_summarizer",
    "llm_judge",
)

DEFAULT_TEMPERATURES = {role: 0.3 for role in ROLE_TAGS}
DEFAULT_TEMPERATURES.update({"challenger": 0.7, "evaluator_judge": 0.0, "llm_judge": 0.0})
DEFAULT_MAX_TOKENS = {role: 512 for role in ROLE_TAGS}
DEFAULT_MAX_TOKENS["memory_summarizer"] = 1024
DEFAULT_MODEL = "gpt-4o-mini"

API_KEY_ENV = "MEMLOOP_API_KEY"
BASE_URL_ENV = "MEMLOOP_BASE_URL"


class GatewayError(RuntimeError):
    """A chat or embedding call failed after all retries."""


class ReplayMiss(GatewayError):
    def __init__(self, role_tag: str, digest: str, nearest: Optional["ReplayEntry"], n_role: int):
        hint = f"nearest entry {nearest.request_digest[:16]}… ({nearest.role_tag})" if nearest else "no entries"
        super().__init__(
            f"replay miss for role_tag={role_tag} digest={digest[:16]}…; "
            f"{n_role} entries recorded for this role; {hint}"
        )
        self.role_tag = role_tag
        self.digest = digest
        self.nearest = nearest


@dataclass(frozen=True)
class ChatRequest:
    role_tag: str
    system_prompt: str
    user_prompt: str
    temperature: float = 0.3
    max_tokens: int = 512

    def __post_init__(self):
        if self.role_tag not in ROLE_TAGS:
            raise ValueError(f"unknown role_tag {self.role_tag!r}")
        if not self.system_prompt or not self.user_prompt:
            raise ValueError("prompts must be non-empty")
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError("temperature must be in [0, 1]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    backend_id: str
    request_digest: str


@dataclass(frozen=True)
class ReplayEntry:
    request_digest: str
    role_tag: str
    response_text: str

    def to_json(self) -> str:
        return json.dumps(
            {"request_digest": self.request_digest, "response_text": self.response_text, "role_tag": self.role_tag},
            ensure_ascii=False, sort_keys=True, separators=(",", ":"),
        )


def request_digest(request: ChatRequest) -> str:
    payload = {
        "max_tokens": int(request.max_tokens),
        "role_tag": request.role_tag,
        "system_prompt": request.system_prompt,
        "temperature": format(float(request.temperature), ".6f"),
        "user_prompt": request.user_prompt,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Backend(Protocol):
    backend_id: str

    def complete(self, request: ChatRequest) -> str: ...


def post_with_retry(
    client: httpx.Client,
    url: str,
    payload: dict,
    headers: dict,
    *,
    attempts: int = 3,
    backoff: tuple[float, ...] = (1.0, 2.0, 4.0),
    sleep: Callable[[float], None] = time.sleep,
) -> dict:
    last: Exception | None = None
    for attempt in range(attempts):
        try:
            resp = client.post(url, json=payload, headers=headers)
            resp.raise_for_status()
            return resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            last = exc
            logger.warning("POST %s failed (attempt %d/%d): %s", url, attempt + 1, attempts, exc)
            if attempt + 1 < attempts:
                sleep(backoff[min(attempt, len(backoff) - 1)])
    raise GatewayError(f"POST {url} failed after {attempts} attempts: {last}") from last


class RemoteBackend:
    def __init__(
        self,
        base_url: str,
        api_key: str,
        model: str = DEFAULT_MODEL,
        *,
        role_models: Optional[dict[str, str]] = None,
        timeout: float = 60.0,
        attempts: int = 3,
        backoff: tuple[float, ...] = (1.0, 2.0, 4.0),
        client: Optional[httpx.Client] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not base_url or not api_key:
            raise GatewayError(f"remote backend needs {BASE_URL_ENV} and {API_KEY_ENV}")
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.role_models = dict(role_models or {})
        self.attempts = attempts
        self.backoff = backoff
        self._sleep = sleep
        self._client = client or httpx.Client(timeout=timeout)
        self.backend_id = f"remote:{model}"

    @classmethod
    def from_env(cls, model: str = DEFAULT_MODEL, **kwargs) -> "RemoteBackend":
        return cls(os.environ.get(BASE_URL_ENV, ""), os.environ.get(API_KEY_ENV, ""), model, **kwargs)

    def model_for(self, role_tag: str) -> str:
        return self.role_models.get(role_tag, self.model)

    def complete(self, request: ChatRequest) -> str:
        payload = {
            "model": self.model_for(request.role_tag),
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        data = post_with_retry(
            self._client, f"{self.base_url}/chat/completions", payload,
            {"Authorization": f"Bearer {self.api_key}"},
            attempts=self.attempts, backoff=self.backoff, sleep=self._sleep,
        )
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed chat completion payload: {str(data)[:200]}") from exc


def read_replay(path: Union[str, Path]) -> list[ReplayEntry]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                entries.append(ReplayEntry(obj["request_digest"], obj["role_tag"], obj["response_text"]))
            except (json.JSONDecodeError, KeyError) as exc:
                raise GatewayError(f"{path}:{lineno}: corrupt replay entry: {exc}") from exc
    return entries


def _common_prefix(a: str, b: str) -> int:
    n = 0
    for x, y in zip(a, b):
        if x != y:
            break
        n += 1
    return n


class ReplayBackend:
    def __init__(self, entries: Iterable[ReplayEntry], backend_id: str = "replay"):
        self._entries: dict[str, ReplayEntry] = {}
        for e in entries:
            if e.request_digest in self._entries:
                raise GatewayError(f"duplicate digest {e.request_digest} in replay data")
            self._entries[e.request_digest] = e
        self.backend_id = backend_id

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ReplayBackend":
        return cls(read_replay(path), backend_id=f"replay:{Path(path).name}")

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, digest: str) -> bool:
        return digest in self._entries

    def lookup(self, digest: str) -> Optional[ReplayEntry]:
        return self._entries.get(digest)

    def complete(self, request: ChatRequest) -> str:
        digest = request_digest(request)
        entry = self._entries.get(digest)
        if entry is None:
            same_role = [e for e in self._entries.values() if e.role_tag == request.role_tag]
            nearest = max(same_role, key=lambda e: (_common_prefix(e.request_digest, digest), e.request_digest),
                          default=None)
            raise ReplayMiss(request.role_tag, digest, nearest, len(same_role))
        return entry.response_text


class RecordingBackend:
    """Forward misses to ``inner`` and append them to a replay file.

    Digests already present in the file are answered locally so the file
    never holds duplicates.
    """

    def __init__(self, inner: Backend, path: Union[str, Path]):
        self.inner = inner
        self.path = Path(path)
        self._lock = threading.Lock()
        existing = read_replay(self.path) if self.path.exists() else []
        self._known = ReplayBackend(existing)
        self.backend_id = f"record:{inner.backend_id}"

    def complete(self, request: ChatRequest) -> str:
        digest = request_digest(request)
        with self._lock:
            hit = self._known.lookup(digest)
        if hit is not None:
            return hit.response_text
        text = self.inner.complete(request)
        entry = ReplayEntry(digest, request.role_tag, text)
        with self._lock:
            if self._known.lookup(digest) is None:
                self._known._entries[digest] = entry
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(entry.to_json() + "\n")
        return text


class Gateway:
    """Builds requests with per-role defaults and bounds in-flight calls."""

    def __init__(
        self,
        backend: Backend,
        *,
        max_in_flight: int = 4,
        temperatures: Optional[dict[str, float]] = None,
        max_tokens: Optional[dict[str, int]] = None,
    ):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.backend = backend
        self.max_in_flight = max_in_flight
        self.temperatures = {**DEFAULT_TEMPERATURES, **(temperatures or {})}
        self.max_tokens = {**DEFAULT_MAX_TOKENS, **(max_tokens or {})}
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def request(self, role_tag: str, system_prompt: str, user_prompt: str) -> ChatRequest:
        return ChatRequest(role_tag, system_prompt, user_prompt,
                           self.temperatures[role_tag], self.max_tokens[role_tag])

    def chat(self, request: ChatRequest) -> ChatResponse:
        with self._slots:
            text = self.backend.complete(request)
        return ChatResponse(text, self.backend.backend_id, request_digest(request))

    def ask(self, role_tag: str, system_prompt: str, user_prompt: str) -> str:
        return self.chat(self.request(role_tag, system_prompt, user_prompt)).text

    def describe(self) -> dict:
        return {"temperatures": dict(self.temperatures), "max_tokens": dict(self.max_tokens)}
