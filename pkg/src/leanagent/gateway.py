"""Backend boundary: serialize context into a chat request, parse replies.

Two backends: an HTTP chat-completions client, and a deterministic scripted
backend that replays fixture replies and checks expected-context predicates
against the serialized request. The scripted backend is the primary
anti-regression oracle: its predicates let tests assert that the ledger,
anchor, and elision machinery actually changed what the model sees.

The gateway never mutates history; it is a pure request/reply boundary.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, Sequence

import requests

from .ledger import SchemaBlock
from .messages import Message, ToolCall


class BackendError(Exception):
    """Unrecoverable backend failure."""


class RetryableBackendError(BackendError):
    """Transient transport failure; retried a bounded number of times."""


class MalformedReplyError(Exception):
    """Reply violates invariants (duplicate call ids, empty reply)."""


class ScriptDivergenceError(BackendError):
    """A scripted step's expected-context predicate failed or ran dry."""

    def __init__(self, step: int, detail: str):
        super().__init__(f"scripted backend diverged at step {step}: {detail}")
        self.step = step
        self.detail = detail


@dataclass(frozen=True)
class ModelReply:
    text: str = ""
    tool_calls: tuple[ToolCall, ...] = ()
    usage: dict[str, int] | None = None

    def __post_init__(self) -> None:
        if not self.text and not self.tool_calls:
            raise MalformedReplyError("reply must carry text or tool calls")
        ids = [c.id for c in self.tool_calls]
        if len(ids) != len(set(ids)):
            raise MalformedReplyError(f"duplicate tool call ids: {ids}")

    def serialize(self) -> str:
        obj: dict[str, Any] = {"text": self.text}
        if self.tool_calls:
            obj["tool_calls"] = [c.to_wire() for c in self.tool_calls]
        if self.usage:
            obj["usage"] = self.usage
        return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "ModelReply":
        calls = []
        for c in obj.get("tool_calls", []):
            if "function" in c:
                calls.append(ToolCall.from_wire(c))
            else:
                calls.append(ToolCall(id=c["id"], name=c["name"], arguments=c.get("arguments", {})))
        return cls(text=obj.get("text", "") or "", tool_calls=tuple(calls), usage=obj.get("usage"))


@dataclass
class ChatRequest:
    system_prompt: str
    messages: tuple[Message, ...]
    tool_schemas: SchemaBlock
    max_output: int = 4_096

    def __post_init__(self) -> None:
        validate_roles(self.messages)


def validate_roles(messages: Sequence[Message]) -> None:
    """No two consecutive assistant messages without user/tool in between."""
    prev = None
    for m in messages:
        if m.role == "assistant" and prev == "assistant":
            raise ValueError("consecutive assistant messages are not a valid request")
        prev = m.role


def serialize_request(request: ChatRequest) -> str:
    """The exact wire body; its character length is what accounting measures."""
    if request.tool_schemas.is_full:
        tools: Any = list(request.tool_schemas.full or ())
    else:
        tools = {"reminder": request.tool_schemas.reminder}
    obj = {
        "system": request.system_prompt,
        "messages": [m.to_wire() for m in request.messages],
        "tools": tools,
        "max_output": request.max_output,
    }
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), sort_keys=True)


def parse_request(payload: str) -> ChatRequest:
    """Inverse of serialize_request; round-trips the message sequence exactly."""
    obj = json.loads(payload)
    tools = obj["tools"]
    if isinstance(tools, dict):
        block = SchemaBlock(full=None, reminder=tools["reminder"], schema_hash="")
    else:
        block = SchemaBlock(full=tuple(tools), reminder=None, schema_hash="")
    return ChatRequest(
        system_prompt=obj["system"],
        messages=tuple(Message.from_wire(m) for m in obj["messages"]),
        tool_schemas=block,
        max_output=obj["max_output"],
    )


class Backend(Protocol):
    def complete(self, request: ChatRequest) -> ModelReply: ...


@dataclass
class ScriptStep:
    reply: ModelReply
    expect_substring: str | None = None
    expect_regex: str | None = None

    def check(self, serialized: str, step_index: int) -> None:
        if self.expect_substring is not None and self.expect_substring not in serialized:
            raise ScriptDivergenceError(
                step_index,
                f"expected substring {self.expect_substring!r} absent; request tail: "
                f"...{serialized[-400:]}",
            )
        if self.expect_regex is not None and not re.search(self.expect_regex, serialized):
            raise ScriptDivergenceError(
                step_index,
                f"expected pattern {self.expect_regex!r} unmatched; request tail: "
                f"...{serialized[-400:]}",
            )


class ScriptedBackend:
    """Replays step i's reply on the i-th call, verifying context predicates."""

    def __init__(self, steps: Sequence[ScriptStep]):
        self.steps = list(steps)
        self.cursor = 0
        self.requests: list[str] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        return cls(load_script(path))

    def complete(self, request: ChatRequest) -> ModelReply:
        serialized = serialize_request(request)
        self.requests.append(serialized)
        step_index = self.cursor
        if step_index >= len(self.steps):
            raise ScriptDivergenceError(step_index, f"script exhausted after {len(self.steps)} steps")
        step = self.steps[step_index]
        step.check(serialized, step_index)
        self.cursor += 1
        return step.reply


def load_script(path: str | Path) -> list[ScriptStep]:
    """Script file format: ordered array of {expect?: predicate, reply: reply}."""
    data = json.loads(Path(path).read_text())
    steps = []
    for i, record in enumerate(data):
        if "reply" not in record:
            raise ValueError(f"script step {i} lacks a reply")
        expect = record.get("expect", {})
        steps.append(
            ScriptStep(
                reply=ModelReply.from_dict(record["reply"]),
                expect_substring=expect.get("substring"),
                expect_regex=expect.get("regex"),
            )
        )
    return steps


class HttpBackend:
    """Chat-completions-style JSON over HTTP with a `tools` array."""

    def __init__(
        self,
        endpoint: str,
        *,
        model: str = "generic",
        api_key: str | None = None,
        timeout_s: float = 120.0,
        max_retries: int = 3,
        retry_base_s: float = 0.5,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self.retry_base_s = retry_base_s

    def complete(self, request: ChatRequest) -> ModelReply:
        body: dict[str, Any] = {
            "model": self.model,
            "messages": [{"role": "system", "content": request.system_prompt}]
            + [m.to_wire() for m in request.messages],
            "max_tokens": request.max_output,
        }
        if request.tool_schemas.is_full:
            body["tools"] = list(request.tool_schemas.full or ())
        headers = {"content-type": "application/json"}
        if self.api_key:
            headers["authorization"] = f"Bearer {self.api_key}"

        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                response = requests.post(self.endpoint, json=body, headers=headers, timeout=self.timeout_s)
            except requests.RequestException as exc:
                last_error = exc
                time.sleep(self.retry_base_s * (2**attempt))
                continue
            if response.status_code >= 500:
                last_error = RetryableBackendError(f"HTTP {response.status_code}")
                time.sleep(self.retry_base_s * (2**attempt))
                continue
            if response.status_code != 200:
                raise BackendError(f"HTTP {response.status_code}: {response.text[:500]}")
            return self._parse(response.json())
        raise BackendError(f"backend unreachable after {self.max_retries} attempts: {last_error}")

    @staticmethod
    def _parse(obj: dict[str, Any]) -> ModelReply:
        try:
            message = obj["choices"][0]["message"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"unparseable completion payload: {exc}")
        calls = tuple(ToolCall.from_wire(c) for c in message.get("tool_calls") or [])
        usage = obj.get("usage")
        return ModelReply(text=message.get("content") or "", tool_calls=calls, usage=usage)


def make_backend(spec: str) -> Backend:
    """Backend spec strings: 'scripted:<path>' or 'http:<url>' / a bare URL."""
    if spec.startswith("scripted:"):
        return ScriptedBackend.from_file(spec.split(":", 1)[1])
    if spec.startswith("http:") and not spec.startswith("http://"):
        return HttpBackend(spec.split(":", 1)[1])
    if spec.startswith(("http://", "https://")):
        return HttpBackend(spec)
    raise ValueError(f"unknown backend spec {spec!r}")
