"""Character-budget bookkeeping over conversation history.

Four mechanisms, from fine to coarse:
  * tag-level compression of older messages (placeholder replacement of
    superseded working-memory blocks, windowed truncation inside
    reasoning/tool tags),
  * FIFO eviction down to a fraction of the budget with head repair of
    orphaned tool results,
  * the per-turn working-memory anchor (rolling one-line summaries plus a
    persistent key_info block),
  * tool-schema elision between periodic full re-sends.

The budget is a character budget: B = alpha * token_window, and history
length is the sum of serialized message lengths. No tokenizer is involved.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .messages import Message, ToolCall, user
from .truncation import already_windowed, truncate_head_tail

# Tags whose older copies are superseded by the newest one.
WORKING_MEMORY_TAGS = ("history", "key_info")
# Tags whose inner content gets windowed in older messages.
WINDOWED_TAGS = ("thinking", "tool_use", "tool_result")

PLACEHOLDER = "[elided: superseded working-memory snapshot]"

_TAG_RES = {
    tag: re.compile(rf"<{tag}(?:\s[^>]*)?>(.*?)</{tag}>", re.DOTALL)
    for tag in WORKING_MEMORY_TAGS + WINDOWED_TAGS
}


class HardOverflowError(Exception):
    """Even the minimal retained suffix exceeds the budget; abort the turn."""


@dataclass
class BudgetConfig:
    """Knobs for the character budget and its maintenance triggers."""

    w_tokens: int = 30_000
    alpha: int = 3
    evict_target_fraction: float = 0.60
    compress_interval_turns: int = 5
    compress_exempt_recent: int = 10
    evict_exempt_recent: int = 4
    tag_window_chars: int = 800

    def __post_init__(self) -> None:
        if self.w_tokens <= 0 or self.alpha <= 0:
            raise ValueError("token window and alpha must be positive")
        if not 0 < self.evict_target_fraction < 1:
            raise ValueError("evict_target_fraction must be in (0, 1)")
        if self.evict_exempt_recent >= self.compress_exempt_recent:
            raise ValueError("evict_exempt_recent must be < compress_exempt_recent")

    @property
    def char_budget(self) -> int:
        """B = alpha * W, exact integer arithmetic."""
        return self.alpha * self.w_tokens


@dataclass
class AnchorBlock:
    """Working-memory anchor injected after every tool-using turn."""

    ring_size: int = 20
    summary_cap: int = 120
    key_info_cap: int = 2_000
    turn_summaries: list[str] = field(default_factory=list)
    current_turn: int = 0
    key_info: str = ""

    def add_summary(self, summary: str) -> None:
        self.turn_summaries.append(summary[: self.summary_cap])
        if len(self.turn_summaries) > self.ring_size:
            del self.turn_summaries[: len(self.turn_summaries) - self.ring_size]


def history_length(history: Iterable[Message]) -> int:
    """C_H: total character length of serialized messages."""
    return sum(m.char_len for m in history)


def _split_window(text: str, window: int) -> str:
    if len(text) <= window or already_windowed(text, window):
        return text
    result, _ = truncate_head_tail(text, window)
    return result


def _final_occurrences(history: Sequence[Message]) -> dict[str, tuple[int, int]]:
    """Per working-memory tag: (message index, span start) of its newest block."""
    finals: dict[str, tuple[int, int]] = {}
    for tag in WORKING_MEMORY_TAGS:
        pattern = _TAG_RES[tag]
        for i in range(len(history) - 1, -1, -1):
            matches = list(pattern.finditer(history[i].content))
            if matches:
                finals[tag] = (i, matches[-1].start())
                break
    return finals


def compress_tags(history: Sequence[Message], config: BudgetConfig, strict: bool = False) -> list[Message]:
    """Tag-level compression of messages older than the exempt window.

    Working-memory blocks other than the globally newest copy become a fixed
    placeholder; reasoning/tool tag contents get head-tail windowed to
    `tag_window_chars`. Message order and count are unchanged; malformed or
    unclosed tags are left untouched; applying twice is a byte-level no-op.
    """
    exempt = config.evict_exempt_recent if strict else config.compress_exempt_recent
    cut = max(0, len(history) - exempt)
    if cut == 0:
        return list(history)

    finals = _final_occurrences(history)
    window = config.tag_window_chars
    out = list(history)
    for i in range(cut):
        content = out[i].content
        if "<" not in content:
            continue
        for tag in WORKING_MEMORY_TAGS:
            final = finals.get(tag)

            def _replace_wm(m: re.Match, _tag: str = tag, _final=final, _i: int = i) -> str:
                if _final is not None and _final == (_i, m.start()):
                    return m.group(0)
                return f"<{_tag}>{PLACEHOLDER}</{_tag}>"

            content = _TAG_RES[tag].sub(_replace_wm, content)
        for tag in WINDOWED_TAGS:
            pattern = _TAG_RES[tag]

            def _replace_win(m: re.Match, _tag: str = tag) -> str:
                inner = m.group(1)
                windowed = _split_window(inner, window)
                if windowed is inner:
                    return m.group(0)
                return f"<{_tag}>{windowed}</{_tag}>"

            content = pattern.sub(_replace_win, content)
        if content != out[i].content:
            out[i] = out[i].with_content(content)
    return out


def _orphan_repair(messages: list[Message]) -> list[Message]:
    """Convert tool results whose call was evicted into plain user text."""
    surviving_calls = {c.id for m in messages for c in m.tool_calls}
    out = []
    for m in messages:
        if m.role == "tool" and m.tool_call_id not in surviving_calls:
            out.append(user(f"[orphaned tool result {m.tool_call_id}, call evicted]\n{m.content}"))
        else:
            out.append(m)
    return out


def evict(history: Sequence[Message], config: BudgetConfig, *, protect_tail: int = 1) -> list[Message]:
    """FIFO eviction: strict recompress, then drop oldest messages.

    Drops until C_H <= evict_target_fraction * B. Never touches a leading
    system message or the newest `protect_tail` messages (the current turn).
    Raises HardOverflowError when even the protected minimum exceeds B.
    Histories already under budget pass through unchanged.
    """
    if history_length(history) <= config.char_budget:
        return list(history)
    msgs = compress_tags(history, config, strict=True)
    budget = config.char_budget
    target = config.evict_target_fraction * budget
    lengths = [m.char_len for m in msgs]
    total = sum(lengths)

    start = 1 if msgs and msgs[0].role == "system" else 0
    end = max(start, len(msgs) - max(protect_tail, 0))
    drop = start
    while total > target and drop < end:
        total -= lengths[drop]
        drop += 1

    repaired = _orphan_repair(msgs[:start] + msgs[drop:])
    # repair rewrites orphaned heads and can nudge lengths past the target
    while history_length(repaired) > target and drop < end:
        total -= lengths[drop]
        drop += 1
        repaired = _orphan_repair(msgs[:start] + msgs[drop:])

    if history_length(repaired) > budget:
        raise HardOverflowError(
            f"minimal retained suffix is {history_length(repaired)} chars, budget is {budget}"
        )
    return repaired


def summarize_turn(turn: int, tool_name: str | None, final_payload: str, cap: int = 120) -> str:
    """Deterministic extractive one-liner: no model call.

    Format: "T<n> <first tool name or 'reply'>: <first line of final payload>",
    hard-capped at `cap` characters.
    """
    head = final_payload.split("\n", 1)[0]
    label = tool_name if tool_name else "reply"
    return f"T{turn} {label}: {head}"[:cap]


def build_anchor(anchor: AnchorBlock) -> str:
    """Render the anchor block appended to the next user-role message."""
    summaries = "\n".join(s[: anchor.summary_cap] for s in anchor.turn_summaries[-anchor.ring_size:])
    return (
        f"<history>\n{summaries}\n</history>\n"
        f"current turn: {anchor.current_turn}\n"
        f"<key_info>\n{anchor.key_info}\n</key_info>"
    )


@dataclass(frozen=True)
class SchemaBlock:
    """Either the full schema list or a one-line reminder, never both."""

    full: tuple[dict, ...] | None
    reminder: str | None
    schema_hash: str

    @property
    def is_full(self) -> bool:
        return self.full is not None


def schema_set_hash(schemas: Sequence[dict]) -> str:
    blob = json.dumps(list(schemas), ensure_ascii=False, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def elide_schemas(
    schemas: Sequence[dict],
    last_sent_turn: int | None,
    current_turn: int,
    config: BudgetConfig,
    *,
    last_hash: str | None = None,
    resend_interval: int = 10,
    prompt_chars: int = 0,
    prompt_threshold_fraction: float = 0.5,
) -> SchemaBlock:
    """Full schemas on change / interval / oversized prompt, else a reminder."""
    h = schema_set_hash(schemas)
    changed = last_hash is not None and h != last_hash
    due = last_sent_turn is None or (current_turn - last_sent_turn) >= resend_interval
    oversized = prompt_chars > prompt_threshold_fraction * config.char_budget
    if changed or due or oversized:
        return SchemaBlock(full=tuple(schemas), reminder=None, schema_hash=h)
    names = ", ".join(s.get("function", s).get("name", "?") for s in schemas)
    return SchemaBlock(
        full=None,
        reminder=f"Tool schemas unchanged since turn {last_sent_turn}; available tools: {names}. "
        "Full schemas are re-sent periodically.",
        schema_hash=h,
    )
