"""Model backends: a chat-completions HTTP client and a scripted replay backend."""

from __future__ import annotations

import enum
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol

import requests

log = logging.getLogger(__name__)

SCRIPT_SCHEMA_VERSION = 1


class FailureKind(enum.Enum):
    TRANSPORT = "Transport"
    HTTP_STATUS = "HttpStatus"
    TIMEOUT = "Timeout"
    SCRIPT_EXHAUSTED = "ScriptExhausted"


class BackendFailure(RuntimeError):
    def __init__(self, kind: FailureKind, message: str):
        super().__init__(f"{kind.value}: {message}")
        self.kind = kind


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: str = ""


@dataclass(frozen=True)
class ModelOutput:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency: float = 0.0
    tool_calls: tuple[ToolCall, ...] = ()

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")
        if self.latency < 0:
            raise ValueError("latency must be non-negative")


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    top_p: float = 1.0
    max_tokens: int = 1024


class ModelBackend(Protocol):
    label: str

    def complete(self, messages: list[dict], params: GenerationParams | None = None) -> ModelOutput: ...


class ScriptedBackend:
    """Replays canned outputs in order; running past the end is an error.

    The cursor is mutable, so an instance belongs to one trajectory.
    """

    def __init__(self, outputs, label: str = "scripted"):
        self.outputs = list(outputs)
        self.label = label
        self.cursor = 0

    def complete(self, messages: list[dict], params: GenerationParams | None = None) -> ModelOutput:
        if not messages:
            raise ValueError("messages must be non-empty")
        if self.cursor >= len(self.outputs):
            raise BackendFailure(
                FailureKind.SCRIPT_EXHAUSTED,
                f"{self.label}: script has {len(self.outputs)} entries, all consumed",
            )
        out = self.outputs[self.cursor]
        self.cursor += 1
        return out

    @classmethod
    def from_dict(cls, data: dict, label: str | None = None) -> "ScriptedBackend":
        version = data.get("schema_version", SCRIPT_SCHEMA_VERSION)
        if version != SCRIPT_SCHEMA_VERSION:
            raise ValueError(f"unsupported script schema_version {version!r}")
        outputs = [
            ModelOutput(
                text=entry["text"],
                prompt_tokens=int(entry.get("prompt_tokens", 0)),
                completion_tokens=int(entry.get("completion_tokens", 0)),
                latency=float(entry.get("latency_seconds", 0.0)),
                tool_calls=tuple(
                    ToolCall(tc["name"], tc.get("arguments", "")) for tc in entry.get("tool_calls", [])
                ),
            )
            for entry in data["outputs"]
        ]
        return cls(outputs, label=label or data.get("label", "scripted"))

    @classmethod
    def from_file(cls, path, label: str | None = None) -> "ScriptedBackend":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), label)


def _parse_tool_calls(message: dict) -> tuple[ToolCall, ...]:
    calls = []
    for tc in message.get("tool_calls") or []:
        fn = tc.get("function", tc)
        calls.append(ToolCall(fn.get("name", ""), fn.get("arguments", "") or ""))
    return tuple(calls)


RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


class ChatCompletionsBackend:
    """HTTP client for an OpenAI-style ``/chat/completions`` endpoint.

    Request body: ``{"model", "messages", "temperature", "top_p", "max_tokens"}``.
    Response fields read: ``choices[0].message.content``,
    ``choices[0].message.tool_calls`` and ``usage.{prompt,completion}_tokens``.
    Transport errors, timeouts and retryable status codes are retried with
    exponential backoff; other HTTP errors fail immediately.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 120.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        label: str | None = None,
    ):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.label = label or model
        self._local = threading.local()

    def _session(self) -> requests.Session:
        session = getattr(self._local, "session", None)
        if session is None:
            session = self._local.session = requests.Session()
        return session

    def complete(self, messages: list[dict], params: GenerationParams | None = None) -> ModelOutput:
        if not messages:
            raise ValueError("messages must be non-empty")
        params = params or GenerationParams()
        payload = {
            "model": self.model,
            "messages": messages,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last: BackendFailure | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            started = time.perf_counter()
            try:
                resp = self._session().post(self.url, json=payload, headers=headers, timeout=self.timeout)
            except requests.Timeout as exc:
                last = BackendFailure(FailureKind.TIMEOUT, f"{self.url}: {exc}")
                continue
            except requests.RequestException as exc:
                last = BackendFailure(FailureKind.TRANSPORT, f"{self.url}: {exc}")
                continue
            latency = time.perf_counter() - started
            if resp.status_code != 200:
                last = BackendFailure(FailureKind.HTTP_STATUS, f"{self.url}: HTTP {resp.status_code}")
                if resp.status_code in RETRYABLE_STATUS:
                    continue
                raise last
            try:
                body = resp.json()
                message = body["choices"][0]["message"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendFailure(FailureKind.TRANSPORT, f"{self.url}: malformed response body: {exc}")
            usage = body.get("usage") or {}
            return ModelOutput(
                text=message.get("content") or "",
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
                latency=latency,
                tool_calls=_parse_tool_calls(message),
            )
        log.warning("giving up on %s after %d attempts", self.url, self.max_retries + 1)
        assert last is not None
        raise last


@dataclass
class EndpointConfig:
    base_url: str = "http://localhost:8000/v1"
    model: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    api_key: Optional[str] = None
    timeout: float = 120.0
    max_retries: int = 3
    script: Optional[str] = None

    def build(self, label: str) -> ModelBackend:
        if self.script:
            return ScriptedBackend.from_file(self.script, label=label)
        return ChatCompletionsBackend(
            self.base_url,
            self.model,
            api_key=self.api_key or os.environ.get(self.api_key_env),
            timeout=self.timeout,
            max_retries=self.max_retries,
            label=label,
        )


# -- tools --------------------------------------------------------------


@dataclass
class ToolRegistry:
    """Name -> callable(arguments) -> observation text."""

    tools: dict = field(default_factory=dict)

    def register(self, name: str, fn) -> None:
        self.tools[name] = fn


def default_registry(lookup_table: dict | None = None) -> ToolRegistry:
    table = dict(lookup_table or {})
    reg = ToolRegistry()
    reg.register("echo", lambda args: args)

    def lookup(args: str) -> str:
        key = args.strip()
        if key not in table:
            raise KeyError(f"no entry for {key!r}")
        return str(table[key])

    reg.register("lookup", lookup)
    return reg


def load_lookup_fixture(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def execute_tool(name: str, arguments: str, registry: ToolRegistry) -> str:
    """Run a tool and return its observation; failures become error text."""
    fn = registry.tools.get(name)
    if fn is None:
        return f"ERROR: unknown tool {name!r}"
    try:
        return str(fn(arguments))
    except Exception as exc:  # the agent sees the failure and carries on
        return f"ERROR: tool {name!r} failed: {exc}"
