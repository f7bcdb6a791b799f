"""Head-tail truncation shared by tool-output bounding and tag windowing."""

from __future__ import annotations

import re

# Fixed format; the omitted-count K tells the model how much it lost.
MARKER_TEMPLATE = "\n...[truncated {k} chars]...\n"
MARKER_RE = re.compile(r"\n\.\.\.\[truncated \d+ chars\]\.\.\.\n")

# Upper bound on marker length; payload bound is always limit + this.
MARKER_ALLOWANCE = 64


def truncate_head_tail(text: str, limit: int) -> tuple[str, bool]:
    """Keep the first floor(limit/2) and last ceil(limit/2) chars of text.

    Returns (result, truncated). Text at or under the limit passes through
    unchanged. The marker in the middle names the omitted char count.
    """
    if limit < 2:
        raise ValueError(f"truncation limit must be >= 2, got {limit}")
    if len(text) <= limit:
        return text, False
    head = limit // 2
    tail = limit - head
    omitted = len(text) - limit
    marker = MARKER_TEMPLATE.format(k=omitted)
    return text[:head] + marker + text[-tail:], True


def already_windowed(text: str, limit: int) -> bool:
    """True when text looks like prior truncate_head_tail output for limit.

    Used to keep repeated compression passes byte-idempotent. A coincidental
    marker in fresh short content makes the pass skip that span, which is
    harmless.
    """
    return len(text) <= limit + MARKER_ALLOWANCE and MARKER_RE.search(text) is not None
