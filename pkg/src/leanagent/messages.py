"""Conversation message model and its canonical wire serialization.

All character accounting in the runtime is defined over ``serialize()``:
the exact string embedded in backend requests, measured in characters.
Tool-result messages carry an extra ``status`` field so archived sessions
preserve ok/error provenance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any

ROLES = ("system", "user", "assistant", "tool")
TOOL_STATUSES = ("ok", "error", "rejected")


@dataclass(frozen=True)
class ToolCall:
    """One structured tool invocation emitted by the model."""

    id: str
    name: str
    arguments: dict[str, Any] = field(default_factory=dict)
    # Set when the backend could not parse this call's argument payload;
    # the kernel converts it into a synthetic error result.
    parse_error: str | None = None

    def to_wire(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "type": "function",
            "function": {
                "name": self.name,
                "arguments": json.dumps(self.arguments, ensure_ascii=False, sort_keys=True),
            },
        }

    @classmethod
    def from_wire(cls, obj: dict[str, Any]) -> "ToolCall":
        fn = obj.get("function", {})
        raw = fn.get("arguments", "{}")
        parse_error = None
        args: dict[str, Any] = {}
        if isinstance(raw, dict):
            args = raw
        else:
            try:
                parsed = json.loads(raw)
                if isinstance(parsed, dict):
                    args = parsed
                else:
                    parse_error = f"arguments must be a JSON object, got {type(parsed).__name__}"
            except (json.JSONDecodeError, TypeError) as exc:
                parse_error = f"malformed JSON arguments: {exc}"
        return cls(id=str(obj.get("id", "")), name=str(fn.get("name", "")), arguments=args, parse_error=parse_error)


@dataclass(frozen=True)
class Message:
    """One conversation entry; the unit of budget accounting."""

    role: str
    content: str = ""
    tool_calls: tuple[ToolCall, ...] = ()
    tool_call_id: str | None = None
    tool_name: str | None = None
    status: str | None = None

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role != "assistant" and self.tool_calls:
            raise ValueError("only assistant messages may carry tool calls")
        if self.role == "tool" and not self.tool_call_id:
            raise ValueError("tool messages require tool_call_id")
        if self.status is not None and self.status not in TOOL_STATUSES:
            raise ValueError(f"unknown tool status {self.status!r}")

    def to_wire(self) -> dict[str, Any]:
        obj: dict[str, Any] = {"role": self.role, "content": self.content}
        if self.tool_calls:
            obj["tool_calls"] = [c.to_wire() for c in self.tool_calls]
        if self.tool_call_id is not None:
            obj["tool_call_id"] = self.tool_call_id
        if self.tool_name is not None:
            obj["name"] = self.tool_name
        if self.status is not None:
            obj["status"] = self.status
        return obj

    @classmethod
    def from_wire(cls, obj: dict[str, Any]) -> "Message":
        return cls(
            role=obj["role"],
            content=obj.get("content") or "",
            tool_calls=tuple(ToolCall.from_wire(c) for c in obj.get("tool_calls", [])),
            tool_call_id=obj.get("tool_call_id"),
            tool_name=obj.get("name"),
            status=obj.get("status"),
        )

    def serialize(self) -> str:
        return json.dumps(self.to_wire(), ensure_ascii=False, separators=(",", ":"), sort_keys=True)

    @property
    def char_len(self) -> int:
        return len(self.serialize())

    def with_content(self, content: str) -> "Message":
        return replace(self, content=content)


def system(text: str) -> Message:
    return Message(role="system", content=text)


def user(text: str) -> Message:
    return Message(role="user", content=text)


def assistant(text: str = "", tool_calls: tuple[ToolCall, ...] = ()) -> Message:
    return Message(role="assistant", content=text, tool_calls=tool_calls)
