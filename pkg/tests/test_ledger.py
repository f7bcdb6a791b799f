from __future__ import annotations

import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leanagent.ledger import (
    PLACEHOLDER,
    AnchorBlock,
    BudgetConfig,
    HardOverflowError,
    build_anchor,
    compress_tags,
    elide_schemas,
    evict,
    history_length,
    summarize_turn,
)
from leanagent.messages import Message, ToolCall, assistant, system, user

MARKER_RE = re.compile(r"\n\.\.\.\[truncated (\d+) chars\]\.\.\.\n")


# --- budget identity ---------------------------------------------------------


def test_char_budget_is_alpha_times_window():
    cfg = BudgetConfig(w_tokens=30_000, alpha=3)
    assert cfg.char_budget == 90_000


@given(w=st.integers(1, 10_000_000), alpha=st.integers(1, 10))
def test_char_budget_identity_exact(w, alpha):
    assert BudgetConfig(w_tokens=w, alpha=alpha).char_budget == alpha * w


def test_budget_config_validation():
    with pytest.raises(ValueError):
        BudgetConfig(evict_target_fraction=1.0)
    with pytest.raises(ValueError):
        BudgetConfig(evict_exempt_recent=10, compress_exempt_recent=10)


# --- history_length -----------------------------------------------------------


def test_history_length_empty():
    assert history_length([]) == 0


def test_history_length_is_serialized_char_count():
    # frozen oracle: this message's wire form is exactly the literal below
    m = user("budget accounting test 123456")
    expected = '{"content":"budget accounting test 123456","role":"user"}'
    assert m.serialize() == expected
    assert len(expected) == 57
    assert history_length([m]) == 57


def test_history_length_additivity():
    m = user("budget accounting test 123456")
    assert history_length([m, m]) == 114


# --- compress_tags -------------------------------------------------------------


def _cfg(**kw) -> BudgetConfig:
    return BudgetConfig(**kw)


def _tool_msg(call_id: str, payload: str, status: str = "ok") -> Message:
    return Message(
        role="tool",
        content=f"<tool_result>\n{payload}\n</tool_result>",
        tool_call_id=call_id,
        status=status,
    )


def _reference_window(inner: str, window: int) -> str:
    # independent reference: head floor(w/2) + marker + tail ceil(w/2)
    if len(inner) <= window:
        return inner
    head, tail = window // 2, window - window // 2
    return inner[:head] + f"\n...[truncated {len(inner) - window} chars]...\n" + inner[-tail:]


def test_compress_all_exempt_is_noop():
    history = [user(f"<tool_result>{'x' * 2000}</tool_result>") for _ in range(8)]
    out = compress_tags(history, _cfg())
    assert [m.serialize() for m in out] == [m.serialize() for m in history]


def test_compress_windows_old_tool_result_to_reference():
    payload = "A" * 2500 + "B" * 2500  # 5000 chars inside the tag
    old = _tool_msg("c1", payload)
    history = [old] + [user(f"filler {i}") for i in range(10)]
    out = compress_tags(history, _cfg())
    inner = re.search(r"<tool_result>(.*)</tool_result>", out[0].content, re.DOTALL).group(1)
    assert inner == _reference_window(f"\n{payload}\n", 800)
    assert len(inner) <= 800 + 64


def test_compress_replaces_superseded_working_memory_blocks():
    anchor_old1 = user("<history>\nT1 a\n</history>\n<key_info>\nplan A\n</key_info>")
    anchor_old2 = user("<history>\nT1 a\nT2 b\n</history>\n<key_info>\nplan B\n</key_info>")
    anchor_new = user("<history>\nT3 c\n</history>\n<key_info>\nplan C\n</key_info>")
    history = [anchor_old1, anchor_old2] + [user(f"filler {i}") for i in range(9)] + [anchor_new]
    out = compress_tags(history, _cfg())
    for i in (0, 1):
        assert out[i].content.count(PLACEHOLDER) == 2
        assert "plan" not in out[i].content.replace(PLACEHOLDER, "")
    # newest copy is exempt and untouched
    assert out[-1].serialize() == anchor_new.serialize()


def test_compress_keeps_globally_newest_block_even_when_old():
    # the only anchor copy sits outside the exempt window: it must survive
    anchor = user("<key_info>\nonly copy\n</key_info>")
    history = [anchor] + [user(f"filler {i}") for i in range(12)]
    out = compress_tags(history, _cfg())
    assert "only copy" in out[0].content


def test_compress_leaves_malformed_tags_alone():
    broken = user("<tool_result>never closed " + "y" * 3000)
    history = [broken] + [user(f"filler {i}") for i in range(10)]
    out = compress_tags(history, _cfg())
    assert out[0].serialize() == broken.serialize()


def test_compress_exemption_windows():
    history = [_tool_msg(f"c{i}", "z" * 2000) for i in range(14)]
    normal = compress_tags(history, _cfg())
    for m in normal[-10:]:
        assert "z" * 2000 in m.content
    strict = compress_tags(history, _cfg(), strict=True)
    for m in strict[-4:]:
        assert "z" * 2000 in m.content
    assert any("truncated" in m.content for m in strict[4:-4])


_tagged_contents = st.one_of(
    st.text(max_size=60),
    st.builds(lambda s: f"<tool_result>\n{s}\n</tool_result>", st.text(min_size=0, max_size=3000)),
    st.builds(lambda s: f"<thinking>{s}</thinking>", st.text(max_size=2000)),
    st.builds(lambda s: f"<history>\n{s}\n</history>", st.text(max_size=1200)),
    st.builds(lambda a, b: f"<key_info>{a}</key_info> mid <tool_use>{b}</tool_use>",
              st.text(max_size=900), st.text(max_size=1500)),
)


@settings(max_examples=60, deadline=None)
@given(contents=st.lists(_tagged_contents, min_size=1, max_size=18), strict=st.booleans())
def test_compress_idempotent_and_exempt(contents, strict):
    history = [user(c) for c in contents]
    cfg = _cfg()
    once = compress_tags(history, cfg, strict=strict)
    twice = compress_tags(once, cfg, strict=strict)
    assert [m.serialize() for m in twice] == [m.serialize() for m in once]
    exempt = cfg.evict_exempt_recent if strict else cfg.compress_exempt_recent
    for before, after in zip(history[-exempt:], once[-exempt:]):
        assert before.serialize() == after.serialize()
    assert len(once) == len(history)


# --- evict ----------------------------------------------------------------------


def _fifo_oracle(history, cfg, protect_tail):
    """Independent greedy FIFO drop simulation (no tags, no tool messages)."""
    lengths = [m.char_len for m in history]
    total = sum(lengths)
    target = cfg.evict_target_fraction * cfg.char_budget
    start = 1 if history and history[0].role == "system" else 0
    end = max(start, len(history) - protect_tail)
    drop = start
    while total > target and drop < end:
        total -= lengths[drop]
        drop += 1
    return list(history[:start]) + list(history[drop:])


def test_evict_under_budget_unchanged():
    cfg = _cfg(w_tokens=30_000, alpha=3)
    history = [system("s")] + [user("x" * 100) for _ in range(10)]
    out = evict(history, cfg)
    assert [m.serialize() for m in out] == [m.serialize() for m in history]


@settings(max_examples=50, deadline=None)
@given(
    sizes=st.lists(st.integers(1, 4000), min_size=3, max_size=60),
    w=st.integers(200, 4_000),
    protect=st.integers(1, 3),
)
def test_evict_matches_fifo_oracle_and_bound(sizes, w, protect):
    cfg = _cfg(w_tokens=w, alpha=3)
    # unique contents so survivor order can be checked by index
    history = [system("sys prompt")] + [user(f"{i}-" + "m" * n) for i, n in enumerate(sizes)]
    if history_length(history) <= cfg.char_budget:
        return
    expected = _fifo_oracle(history, cfg, protect)
    minimal = sum(m.char_len for m in [history[0]] + history[len(history) - protect:])
    if minimal > cfg.char_budget:
        with pytest.raises(HardOverflowError):
            evict(history, cfg, protect_tail=protect)
        return
    out = evict(history, cfg, protect_tail=protect)
    assert [m.serialize() for m in out] == [m.serialize() for m in expected]
    if history_length(expected) <= cfg.evict_target_fraction * cfg.char_budget:
        assert history_length(out) <= cfg.evict_target_fraction * cfg.char_budget
    # survivors keep their relative order
    originals = [m.serialize() for m in history]
    indexes = [originals.index(m.serialize()) for m in out]
    assert indexes == sorted(indexes)


def test_evict_worked_example_bound():
    # C_H about 100k against B = 90k: post-eviction C_H <= 54k
    cfg = _cfg(w_tokens=30_000, alpha=3)
    history = [system("s")] + [user("q" * 1000) for _ in range(99)]
    assert history_length(history) > 90_000
    out = evict(history, cfg)
    assert history_length(out) <= 54_000


def test_evict_repairs_orphaned_tool_result_head():
    # size the bulky assistant message so it is the only message dropped
    call = ToolCall("17", "code_run", {"language": "bash", "source": "x" * 400})
    history = [
        assistant("", (call,)),
        _tool_msg("17", "payload-17"),
        user("tail"),
    ]
    cfg = _cfg(w_tokens=history_length(history) - 1, alpha=1)
    out = evict(history, cfg, protect_tail=1)
    heads = [m for m in out if "payload-17" in m.content]
    assert heads, "payload must survive as plain text"
    assert heads[0].role == "user"
    assert "orphaned tool result 17" in heads[0].content
    assert not any(m.role == "tool" and m.tool_call_id == "17" for m in out)


@settings(max_examples=50, deadline=None)
@given(
    layout=st.lists(st.tuples(st.booleans(), st.integers(1, 800)), min_size=4, max_size=40),
    w=st.integers(300, 3_000),
)
def test_evict_bound_holds_with_tool_messages(layout, w):
    """Orphan repair may rewrite heads; the 60% bound must survive it."""
    cfg = _cfg(w_tokens=w, alpha=3)
    history = [system("sys")]
    for i, (as_tool, n) in enumerate(layout):
        if as_tool:
            call = ToolCall(f"c{i}", "code_run", {"language": "bash", "source": "x"})
            history.append(assistant(f"turn {i}", (call,)))
            history.append(_tool_msg(f"c{i}", f"{i}-" + "p" * n))
        else:
            history.append(user(f"{i}-" + "u" * n))
    if history_length(history) <= cfg.char_budget:
        return
    minimal = history[0].char_len + history[-1].char_len
    try:
        out = evict(history, cfg, protect_tail=1)
    except HardOverflowError:
        assert minimal + 64 > cfg.char_budget  # only a too-big protected core may overflow
        return
    target = cfg.evict_target_fraction * cfg.char_budget
    if minimal + 64 <= target:
        assert history_length(out) <= target
    # pairing safety: surviving tool messages either kept their call or were repaired
    surviving_calls = {c.id for m in out for c in m.tool_calls}
    for m in out:
        if m.role == "tool":
            assert m.tool_call_id in surviving_calls


def test_evict_never_drops_system_or_current_turn():
    cfg = _cfg(w_tokens=100, alpha=3)
    history = [system("SYSTEM")] + [user("f" * 80) for _ in range(10)] + [user("CURRENT")]
    out = evict(history, cfg, protect_tail=1)
    assert out[0].content == "SYSTEM"
    assert out[-1].content == "CURRENT"


def test_evict_hard_overflow():
    cfg = _cfg(w_tokens=10, alpha=3)  # B = 30
    history = [system("s" * 500), user("u" * 500)]
    with pytest.raises(HardOverflowError):
        evict(history, cfg, protect_tail=1)


# --- anchor --------------------------------------------------------------------


def test_anchor_empty():
    anchor = AnchorBlock()
    text = build_anchor(anchor)
    assert "<history>" in text and "<key_info>" in text
    assert "current turn: 0" in text


def test_anchor_ring_keeps_20_most_recent():
    anchor = AnchorBlock()
    for i in range(1, 26):
        anchor.add_summary(f"T{i} reply: step {i}")
    anchor.current_turn = 25
    text = build_anchor(anchor)
    # ring oracle: exactly summaries 6..25
    for i in range(6, 26):
        assert f"T{i} reply: step {i}" in text
    for i in range(1, 6):
        assert f"T{i} reply: step {i}\n" not in text
    assert len(anchor.turn_summaries) == 20


def test_anchor_key_info_verbatim():
    anchor = AnchorBlock(key_info="K")
    assert "K" in build_anchor(anchor)


def test_anchor_ring_bound_property():
    anchor = AnchorBlock()
    for n in range(1, 50):
        anchor.add_summary(f"T{n}")
        assert len(anchor.turn_summaries) == min(n, 20)
        assert anchor.turn_summaries[-1] == f"T{n}"


def test_summary_cap_is_hard():
    anchor = AnchorBlock()
    anchor.add_summary("s" * 300)
    assert len(anchor.turn_summaries[0]) == 120


# --- summarize_turn ---------------------------------------------------------------


def test_summarize_code_run():
    assert summarize_turn(3, "code_run", "hi\n[exit 0]") == "T3 code_run: hi"


def test_summarize_pure_reply():
    assert summarize_turn(4, None, "some text here\nsecond line") == "T4 reply: some text here"


def test_summarize_cap_exactly_120():
    out = summarize_turn(5, "file_read", "x" * 300)
    assert len(out) == 120


# --- elide_schemas -----------------------------------------------------------------


_SCHEMAS = [{"type": "function", "function": {"name": f"tool_{i}", "parameters": {}}} for i in range(3)]


def test_elide_unchanged_recent_gives_reminder():
    cfg = _cfg()
    first = elide_schemas(_SCHEMAS, None, 0, cfg)
    assert first.is_full
    block = elide_schemas(_SCHEMAS, 0, 3, cfg, last_hash=first.schema_hash)
    assert not block.is_full
    assert "tool_0" in block.reminder and "tool_2" in block.reminder


def test_elide_schema_change_forces_full():
    cfg = _cfg()
    first = elide_schemas(_SCHEMAS, None, 0, cfg)
    edited = [dict(s) for s in _SCHEMAS]
    edited[0] = {"type": "function", "function": {"name": "tool_0", "parameters": {"changed": True}}}
    block = elide_schemas(edited, 0, 1, cfg, last_hash=first.schema_hash)
    assert block.is_full


def test_elide_interval_forces_full():
    cfg = _cfg()
    first = elide_schemas(_SCHEMAS, None, 0, cfg)
    block = elide_schemas(_SCHEMAS, 0, 10, cfg, last_hash=first.schema_hash, resend_interval=10)
    assert block.is_full


def test_elide_oversized_prompt_forces_full():
    cfg = _cfg()
    first = elide_schemas(_SCHEMAS, None, 0, cfg)
    block = elide_schemas(
        _SCHEMAS, 0, 1, cfg, last_hash=first.schema_hash, prompt_chars=int(0.6 * cfg.char_budget)
    )
    assert block.is_full
