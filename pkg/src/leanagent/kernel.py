"""Per-session agent loop: assemble context, call the backend, dispatch
tools, maintain the ledger, enforce execution bounds, terminate.

One "round" is one model request. Sessions are single-threaded; concurrent
sessions are separate OS processes sharing only the memory store.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable

from .config import RuntimeConfig
from .gateway import (
    Backend,
    BackendError,
    ChatRequest,
    MalformedReplyError,
    ModelReply,
    ScriptDivergenceError,
    serialize_request,
)
from .ledger import (
    AnchorBlock,
    HardOverflowError,
    build_anchor,
    compress_tags,
    elide_schemas,
    evict,
    history_length,
    summarize_turn,
)
from .memory import MemoryStore
from .messages import Message, assistant, system, user
from .toolkit import ToolResult, builtin_schemas, dispatch


class Mode(str, Enum):
    INTERACT = "interact"
    REFLECT = "reflect"


class TerminalReason(str, Enum):
    COMPLETED = "completed"
    ROUND_CAP = "round_cap"
    USER_ABORT = "user_abort"
    ESCALATED_TO_USER = "escalated_to_user"
    FATAL_ERROR = "fatal_error"


class EscalationStage(str, Enum):
    NONE = "none"
    LOCAL_RETRY = "local_retry"
    STRATEGY_SWITCH = "strategy_switch"
    HUMAN = "human"


_STAGE_ORDER = [
    EscalationStage.NONE,
    EscalationStage.LOCAL_RETRY,
    EscalationStage.STRATEGY_SWITCH,
    EscalationStage.HUMAN,
]

# Failure streak thresholds: first failure escalates immediately, then two
# further failures per stage.
_STAGE_AT_FAILURES = {1: EscalationStage.LOCAL_RETRY, 3: EscalationStage.STRATEGY_SWITCH, 5: EscalationStage.HUMAN}

GUIDANCE = {
    EscalationStage.LOCAL_RETRY: (
        "[recovery: local retry] The last tool call failed. Analyze the error "
        "message and retry with a small, localized adjustment."
    ),
    EscalationStage.STRATEGY_SWITCH: (
        "[recovery: strategy switch] Repeated failures. Abandon the current "
        "approach entirely: switch to a different strategy or search the "
        "environment for the missing information."
    ),
    EscalationStage.HUMAN: (
        "[recovery: human intervention] Automated recovery has failed. You must "
        "now call ask_user to request guidance, or the session will end."
    ),
}


@dataclass
class EscalationState:
    stage: EscalationStage = EscalationStage.NONE
    consecutive_failures: int = 0
    last_error: str | None = None

    def record_failure(self, error: str) -> bool:
        """Returns True when the stage advanced."""
        self.consecutive_failures += 1
        self.last_error = error
        target = _STAGE_AT_FAILURES.get(self.consecutive_failures)
        if target is not None and _STAGE_ORDER.index(target) > _STAGE_ORDER.index(self.stage):
            self.stage = target
            return True
        return False

    def record_success(self) -> None:
        self.stage = EscalationStage.NONE
        self.consecutive_failures = 0
        self.last_error = None


def escalate(state: EscalationState, error: str) -> EscalationState:
    """Advance one stage: none -> local_retry -> strategy_switch -> human."""
    idx = min(_STAGE_ORDER.index(state.stage) + 1, len(_STAGE_ORDER) - 1)
    return EscalationState(stage=_STAGE_ORDER[idx], consecutive_failures=state.consecutive_failures + 1, last_error=error)


@dataclass
class SessionState:
    session_id: str
    mode: str
    history: list[Message]
    config: RuntimeConfig
    store: MemoryStore
    backend: Backend
    workspace_dir: Path
    anchor: AnchorBlock
    escalation: EscalationState = field(default_factory=EscalationState)
    turn_index: int = 0
    round_cap: int = 30
    finished: bool = False
    reason: TerminalReason | None = None
    final_text: str = ""
    # runtime handles
    schemas: tuple = ()
    browser: object | None = None
    reply_channel: Callable[[str], str] | None = None
    code_run_used_this_turn: bool = False
    ok_result_ids: set[str] = field(default_factory=set)
    pending_anchor: bool = False
    pending_guidance: str | None = None
    schemas_last_sent: int | None = None
    schema_hash: str | None = None
    sandbox_violation: bool = False
    abort_on_sandbox_violation: bool = False
    chars_sent: int = 0
    chars_received: int = 0

    def finish(self, reason: TerminalReason, final_text: str = "") -> None:
        if self.finished:
            return
        self.finished = True
        self.reason = reason
        if final_text:
            self.final_text = final_text


@dataclass
class TurnResult:
    reply: ModelReply | None
    results: list[ToolResult]
    error: str | None = None


@dataclass
class SessionOutcome:
    session_id: str
    reason: TerminalReason
    final_text: str
    turns: int
    chars_sent: int
    chars_received: int
    transcript_path: str

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "reason": self.reason.value,
            "final_text": self.final_text,
            "turns": self.turns,
            "chars_sent": self.chars_sent,
            "chars_received": self.chars_received,
            "transcript_path": self.transcript_path,
        }


def new_session(
    task: str,
    mode: str,
    config: RuntimeConfig,
    *,
    backend: Backend,
    store: MemoryStore,
    workspace_dir: str | Path,
    session_id: str | None = None,
    reply_channel: Callable[[str], str] | None = None,
    browser: object | None = None,
    round_cap: int | None = None,
    strict_sandbox: bool = False,
) -> SessionState:
    if not task.strip():
        raise ValueError("task must be non-empty")
    workspace = Path(workspace_dir)
    if not workspace.is_dir():
        raise ValueError(f"workspace directory does not exist: {workspace}")
    anchor = AnchorBlock(
        ring_size=config.anchor_ring_size,
        summary_cap=config.anchor_summary_chars,
        key_info_cap=config.thresholds.key_info_cap,
    )
    system_prompt = f"{config.base_prompt}\n\n{store.load_always_on()}"
    state = SessionState(
        session_id=session_id or uuid.uuid4().hex[:12],
        mode=mode,
        history=[system(system_prompt), user(task)],
        config=config,
        store=store,
        backend=backend,
        workspace_dir=workspace,
        anchor=anchor,
        round_cap=round_cap if round_cap is not None else config.round_cap,
        schemas=builtin_schemas(config.thresholds),
        reply_channel=reply_channel,
        browser=browser,
        abort_on_sandbox_violation=strict_sandbox,
    )
    return state


def _schema_block(state: SessionState) -> tuple:
    wires = [s.to_wire() for s in state.schemas]
    prompt_chars = history_length(state.history) + len(state.history[0].content)
    block = elide_schemas(
        wires,
        state.schemas_last_sent,
        state.turn_index,
        state.config.budget,
        last_hash=state.schema_hash,
        resend_interval=state.config.schema_resend_interval,
        prompt_chars=prompt_chars,
        prompt_threshold_fraction=state.config.schema_resend_prompt_fraction,
    )
    if block.is_full:
        state.schemas_last_sent = state.turn_index
    state.schema_hash = block.schema_hash
    return block


def run_turn(state: SessionState) -> TurnResult:
    """One model request plus the dispatch and maintenance it entails."""
    if state.finished:
        raise RuntimeError("session already finished")

    human_gate = state.escalation.stage == EscalationStage.HUMAN
    len_at_start = len(state.history)

    inject: list[str] = []
    if state.pending_anchor:
        inject.append(build_anchor(state.anchor))
        state.pending_anchor = False
    if state.pending_guidance:
        inject.append(state.pending_guidance)
        state.pending_guidance = None
    if inject:
        state.history.append(user("\n\n".join(inject)))

    request = ChatRequest(
        system_prompt=state.history[0].content,
        messages=tuple(state.history[1:]),
        tool_schemas=_schema_block(state),
        max_output=state.config.max_output,
    )
    state.chars_sent += len(serialize_request(request))

    error: str | None = None
    reply: ModelReply | None = None
    results: list[ToolResult] = []
    first_tool: str | None = None
    final_payload = ""

    try:
        reply = state.backend.complete(request)
    except MalformedReplyError as exc:
        error = str(exc)
        state.history.append(user(f"[protocol error] your reply was rejected: {exc}"))
        if state.escalation.record_failure(error):
            state.pending_guidance = GUIDANCE[state.escalation.stage]
    else:
        state.chars_received += len(reply.serialize())
        state.history.append(assistant(reply.text, reply.tool_calls))
        if not reply.tool_calls:
            state.finish(TerminalReason.COMPLETED, reply.text)
            final_payload = reply.text
        else:
            if human_gate and not any(c.name == "ask_user" for c in reply.tool_calls):
                for call in reply.tool_calls:
                    result = ToolResult(call.id, "rejected", "session escalated to user", tool_name=call.name)
                    state.history.append(result.to_message())
                    results.append(result)
                state.finish(TerminalReason.ESCALATED_TO_USER, state.escalation.last_error or "")
            else:
                state.code_run_used_this_turn = False
                for call in reply.tool_calls:
                    if call.parse_error:
                        result = ToolResult(
                            call.id, "error", f"argument parse error: {call.parse_error}", tool_name=call.name
                        )
                    else:
                        result = dispatch(call, state)
                    state.history.append(result.to_message())
                    results.append(result)
                    if result.status == "ok":
                        state.ok_result_ids.add(call.id)
                        state.escalation.record_success()
                    else:
                        if state.escalation.record_failure(result.payload):
                            state.pending_guidance = GUIDANCE[state.escalation.stage]
                    if state.sandbox_violation and state.abort_on_sandbox_violation:
                        state.finish(TerminalReason.FATAL_ERROR, f"sandbox violation: {result.payload}")
                        break
                state.pending_anchor = True
            first_tool = reply.tool_calls[0].name
            final_payload = results[-1].payload if results else ""

    turn_no = state.turn_index + 1
    state.anchor.add_summary(
        summarize_turn(turn_no, first_tool, final_payload or (reply.text if reply else error or ""),
                       cap=state.config.anchor_summary_chars)
    )
    state.anchor.current_turn = turn_no
    state.turn_index = turn_no

    budget = state.config.budget
    if turn_no % budget.compress_interval_turns == 0:
        state.history = compress_tags(state.history, budget)
    if history_length(state.history) > budget.char_budget:
        protect = len(state.history) - len_at_start
        state.history = evict(state.history, budget, protect_tail=max(protect, 1))

    return TurnResult(reply=reply, results=results, error=error)


def run_session(
    task: str,
    mode: str,
    config: RuntimeConfig,
    *,
    backend: Backend,
    store: MemoryStore,
    workspace_dir: str | Path,
    session_id: str | None = None,
    reply_channel: Callable[[str], str] | None = None,
    browser: object | None = None,
    round_cap: int | None = None,
    strict_sandbox: bool = False,
) -> SessionOutcome:
    """Run one session to termination and archive its transcript."""
    state = new_session(
        task,
        mode,
        config,
        backend=backend,
        store=store,
        workspace_dir=workspace_dir,
        session_id=session_id,
        reply_channel=reply_channel,
        browser=browser,
        round_cap=round_cap,
        strict_sandbox=strict_sandbox,
    )
    try:
        while not state.finished:
            if state.turn_index >= state.round_cap:
                state.finish(TerminalReason.ROUND_CAP)
                break
            run_turn(state)
    except HardOverflowError as exc:
        state.finish(TerminalReason.FATAL_ERROR, f"context overflow: {exc}")
    except KeyboardInterrupt:
        state.finish(TerminalReason.USER_ABORT)
    except ScriptDivergenceError:
        raise  # fixture mismatch is a harness fault, not a runtime condition
    except BackendError as exc:
        state.finish(TerminalReason.FATAL_ERROR, f"backend failure: {exc}")

    transcript_path = store.archive_session(state.session_id, state.history)
    assert state.reason is not None
    return SessionOutcome(
        session_id=state.session_id,
        reason=state.reason,
        final_text=state.final_text,
        turns=state.turn_index,
        chars_sent=state.chars_sent,
        chars_received=state.chars_received,
        transcript_path=str(transcript_path),
    )
