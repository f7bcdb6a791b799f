from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leanagent.gateway import (
    ChatRequest,
    MalformedReplyError,
    ModelReply,
    ScriptDivergenceError,
    ScriptStep,
    ScriptedBackend,
    load_script,
    make_backend,
    parse_request,
    serialize_request,
)
from leanagent.ledger import SchemaBlock
from leanagent.messages import Message, ToolCall, assistant, user
from leanagent.toolkit import builtin_schemas, schema_index, validate_arguments
from leanagent.config import RuntimeConfig

FULL_BLOCK = SchemaBlock(full=({"type": "function", "function": {"name": "t"}},), reminder=None, schema_hash="h")
REMINDER_BLOCK = SchemaBlock(full=None, reminder="tools: t", schema_hash="h")


def _request(messages, block=REMINDER_BLOCK):
    return ChatRequest(system_prompt="sys", messages=tuple(messages), tool_schemas=block, max_output=256)


# --- serialization round-trip ---------------------------------------------------


_roles_content = st.lists(
    st.one_of(
        st.builds(user, st.text(max_size=80)),
        st.builds(
            lambda text, cid: assistant(text, (ToolCall(cid, "code_run", {"language": "bash", "source": "x"}),)),
            st.text(max_size=40),
            st.uuids().map(str),
        ),
    ),
    min_size=0,
    max_size=8,
)


def _interleave_valid(messages):
    out = []
    for m in messages:
        if m.role == "assistant" and out and out[-1].role == "assistant":
            out.append(user("separator"))
        out.append(m)
    return out


@settings(max_examples=80, deadline=None)
@given(messages=_roles_content, full=st.booleans())
def test_round_trip_reproduces_message_sequence(messages, full):
    request = _request(_interleave_valid(messages), FULL_BLOCK if full else REMINDER_BLOCK)
    parsed = parse_request(serialize_request(request))
    assert [m.serialize() for m in parsed.messages] == [m.serialize() for m in request.messages]
    assert parsed.system_prompt == request.system_prompt
    assert parsed.max_output == request.max_output
    assert parsed.tool_schemas.is_full == request.tool_schemas.is_full


def test_role_alternation_rejected():
    with pytest.raises(ValueError):
        _request([assistant("a"), assistant("b")])


def test_tool_between_assistants_is_valid():
    messages = [
        assistant("a", (ToolCall("c1", "code_run", {"language": "bash", "source": "x"}),)),
        Message(role="tool", content="r", tool_call_id="c1", status="ok"),
        assistant("b"),
    ]
    _request(messages)  # no raise


# --- reply invariants ---------------------------------------------------------------


def test_empty_reply_rejected():
    with pytest.raises(MalformedReplyError):
        ModelReply(text="", tool_calls=())


def test_duplicate_call_ids_rejected():
    with pytest.raises(MalformedReplyError):
        ModelReply(
            tool_calls=(
                ToolCall("same", "file_read", {"path": "a"}),
                ToolCall("same", "file_read", {"path": "b"}),
            )
        )


def test_malformed_arguments_attach_per_call_parse_error():
    wire = {
        "id": "c1",
        "type": "function",
        "function": {"name": "file_read", "arguments": "{not json"},
    }
    call = ToolCall.from_wire(wire)
    assert call.parse_error is not None
    assert "malformed JSON" in call.parse_error


def test_schema_validation_catches_wrong_type():
    # arguments parse as JSON but violate the declared schema
    schemas = schema_index(builtin_schemas(RuntimeConfig.defaults().thresholds))
    reason = validate_arguments(schemas["file_read"], {"path": 5})
    assert reason is not None
    assert "path" in reason and "5" in reason


# --- scripted backend ------------------------------------------------------------------


def _steps(n):
    return [ScriptStep(reply=ModelReply(text=f"reply {i}")) for i in range(n)]


def test_scripted_replay_in_order():
    backend = ScriptedBackend(_steps(3))
    for i in range(3):
        reply = backend.complete(_request([user("hi")]))
        assert reply.text == f"reply {i}"


def test_scripted_replay_is_identity_on_fixture():
    fixture = ModelReply(
        text="fixture text",
        tool_calls=(ToolCall("cx", "file_write", {"path": "a.txt", "content": "b"}),),
    )
    backend = ScriptedBackend([ScriptStep(reply=fixture)] * 3)
    backend.complete(_request([user("1")]))
    backend.complete(_request([user("2")]))
    out = backend.complete(_request([user("3")]))
    assert out.serialize() == fixture.serialize()


def test_script_exhaustion_diverges():
    backend = ScriptedBackend(_steps(1))
    backend.complete(_request([user("a")]))
    with pytest.raises(ScriptDivergenceError) as err:
        backend.complete(_request([user("b")]))
    assert err.value.step == 1
    assert "exhausted" in str(err.value)


def test_predicate_mismatch_diverges_with_step_and_excerpt():
    steps = [ScriptStep(reply=ModelReply(text="ok"), expect_substring="key_info")]
    backend = ScriptedBackend(steps)
    with pytest.raises(ScriptDivergenceError) as err:
        backend.complete(_request([user("no anchor here")]))
    assert err.value.step == 0
    assert "key_info" in err.value.detail
    assert "no anchor here" in err.value.detail  # diff excerpt shows the request tail


def test_predicate_regex():
    steps = [ScriptStep(reply=ModelReply(text="ok"), expect_regex=r"turn: \d+")]
    backend = ScriptedBackend(steps)
    assert backend.complete(_request([user("current turn: 7")])).text == "ok"


def test_script_file_format(tmp_path):
    script = [
        {"reply": {"text": "step one"}},
        {
            "expect": {"substring": "marker"},
            "reply": {"tool_calls": [{"id": "c1", "name": "code_run", "arguments": {"language": "bash", "source": "true"}}]},
        },
    ]
    path = tmp_path / "script.json"
    path.write_text(json.dumps(script))
    steps = load_script(path)
    assert len(steps) == 2
    assert steps[0].reply.text == "step one"
    assert steps[1].expect_substring == "marker"
    assert steps[1].reply.tool_calls[0].name == "code_run"
    backend = make_backend(f"scripted:{path}")
    assert isinstance(backend, ScriptedBackend)


def test_backend_records_requests_for_oracles():
    backend = ScriptedBackend(_steps(2))
    backend.complete(_request([user("first")]))
    backend.complete(_request([user("second")]))
    assert len(backend.requests) == 2
    assert "first" in backend.requests[0]
    assert "second" in backend.requests[1]
