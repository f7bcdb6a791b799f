"""The nine atomic tools: schema contracts, dispatch, output bounding.

Dispatch is total: every call yields exactly one result with the matching
call id, including unknown tools, invalid arguments, and executor crashes.
Oversized outputs are head-tail truncated before entering history, with the
full text parked on disk as a side channel.

Write-capable tools are confined to the workspace root plus the memory
root; reads are configurable.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable, Sequence

import jsonschema

from .messages import Message, ToolCall
from .truncation import MARKER_ALLOWANCE, truncate_head_tail

if TYPE_CHECKING:
    from .kernel import SessionState


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str
    parameters: dict[str, Any]
    threshold: int

    def __post_init__(self) -> None:
        if self.threshold <= 0:
            raise ValueError(f"{self.name}: threshold must be positive")

    def to_wire(self) -> dict[str, Any]:
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": self.parameters,
            },
        }


@dataclass
class ToolResult:
    call_id: str
    status: str  # ok | error | rejected
    payload: str
    truncated: bool = False
    side_channel: str | None = None
    tool_name: str = ""

    def to_message(self) -> Message:
        return Message(
            role="tool",
            content=f"<tool_result>\n{self.payload}\n</tool_result>",
            tool_call_id=self.call_id,
            tool_name=self.tool_name,
            status=self.status,
        )


def _params(properties: dict[str, Any], required: Sequence[str]) -> dict[str, Any]:
    return {
        "type": "object",
        "properties": properties,
        "required": list(required),
        "additionalProperties": False,
    }


def builtin_schemas(thresholds) -> tuple[ToolSchema, ...]:
    """Declarations for the full atomic set, thresholds per shipped config."""
    return (
        ToolSchema(
            "file_read",
            "Read a slice of a text file with 1-based line numbers. Supports "
            "segmented reads (start/count) and keyword anchoring: keyword moves "
            "start to the first matching line.",
            _params(
                {
                    "path": {"type": "string"},
                    "start": {"type": "integer", "minimum": 1},
                    "count": {"type": "integer", "minimum": 1},
                    "keyword": {"type": "string"},
                },
                ["path"],
            ),
            thresholds.file_read_total,
        ),
        ToolSchema(
            "file_write",
            "Replace a file's content atomically (block writing). Creates parent "
            "directories inside the sandbox.",
            _params({"path": {"type": "string"}, "content": {"type": "string"}}, ["path", "content"]),
            thresholds.default,
        ),
        ToolSchema(
            "file_patch",
            "Replace one exact occurrence of old_content with new_content. Fails "
            "fast on zero or multiple matches, leaving the file untouched.",
            _params(
                {
                    "path": {"type": "string"},
                    "old_content": {"type": "string"},
                    "new_content": {"type": "string"},
                },
                ["path", "old_content", "new_content"],
            ),
            thresholds.default,
        ),
        ToolSchema(
            "code_run",
            "Execute Python or Bash in the workspace. At most one invocation per "
            "turn so each result is observed before the next action.",
            _params(
                {
                    "language": {"type": "string", "enum": ["python", "bash"]},
                    "source": {"type": "string"},
                    "timeout": {"type": "number", "exclusiveMinimum": 0},
                },
                ["language", "source"],
            ),
            thresholds.code_run,
        ),
        ToolSchema(
            "web_scan",
            "Structured observation of the current page (or a URL to open first): "
            "visible main content only, hidden/covered elements removed.",
            _params(
                {
                    "url": {"type": "string"},
                    "mode": {"type": "string", "enum": ["text_only", "html"]},
                },
                ["mode"],
            ),
            thresholds.web_scan_text_only,
        ),
        ToolSchema(
            "web_execute_js",
            "Evaluate JavaScript in the page and return the value plus a compact "
            "page-change observation (URL/title change, mutation count).",
            _params(
                {
                    "script": {"type": "string"},
                    "save_to_file": {"type": "string"},
                },
                ["script"],
            ),
            thresholds.web_execute_js,
        ),
        ToolSchema(
            "ask_user",
            "Ask the human a question and block for the reply. Use when a user "
            "decision is required.",
            _params({"question": {"type": "string"}}, ["question"]),
            thresholds.default,
        ),
        ToolSchema(
            "update_working_checkpoint",
            "Replace the persistent key_info block carried by the working-memory "
            "anchor. Empty string clears it.",
            _params({"key_info": {"type": "string"}}, ["key_info"]),
            thresholds.default,
        ),
        ToolSchema(
            "start_long_term_update",
            "Propose a verified fact (L2) or procedure (L3) for long-term memory. "
            "Must cite ok tool-result ids from this session as evidence.",
            _params(
                {
                    "target_layer": {"type": "string", "enum": ["L2", "L3"]},
                    "title": {"type": "string"},
                    "body": {"type": "string"},
                    "evidence": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                },
                ["target_layer", "title", "body", "evidence"],
            ),
            thresholds.default,
        ),
    )


def schema_index(schemas: Sequence[ToolSchema]) -> dict[str, ToolSchema]:
    return {s.name: s for s in schemas}


def toolset_hash(schemas: Sequence[ToolSchema]) -> str:
    """Fingerprint of the fixed tool layer; evolution must never change it."""
    blob = json.dumps([s.to_wire() for s in schemas], sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def validate_arguments(schema: ToolSchema, arguments: dict[str, Any]) -> str | None:
    """Field-level reason string on failure, None when valid."""
    validator = jsonschema.Draft202012Validator(schema.parameters)
    errors = sorted(validator.iter_errors(arguments), key=lambda e: list(e.path))
    if not errors:
        return None
    err = errors[0]
    where = ".".join(str(p) for p in err.path) or "(root)"
    return f"{where}: {err.message}"


# --- sandbox -----------------------------------------------------------------


def _allowed_roots(ctx: "SessionState") -> list[Path]:
    return [Path(ctx.workspace_dir).resolve(), Path(ctx.store.layout.root).resolve()]


def resolve_write_path(raw: str, ctx: "SessionState") -> Path | None:
    """Resolve against the workspace; None when it escapes the allowed roots."""
    p = Path(raw)
    if not p.is_absolute():
        p = Path(ctx.workspace_dir) / p
    resolved = p.resolve()
    for root in _allowed_roots(ctx):
        if resolved == root or root in resolved.parents:
            return resolved
    return None


def resolve_read_path(raw: str, ctx: "SessionState") -> Path | None:
    p = Path(raw)
    if not p.is_absolute():
        p = Path(ctx.workspace_dir) / p
    resolved = p.resolve()
    read_roots = getattr(ctx.config, "read_roots", None)
    if read_roots is None:
        return resolved
    for root in [Path(r).resolve() for r in read_roots] + _allowed_roots(ctx):
        if resolved == root or root in resolved.parents:
            return resolved
    return None


# --- executors ---------------------------------------------------------------


def _exec_file_read(args: dict, ctx: "SessionState") -> ToolResult:
    path = resolve_read_path(args["path"], ctx)
    if path is None:
        ctx.sandbox_violation = True
        return ToolResult("", "rejected", f"sandbox violation: read of {args['path']!r} is outside allowed roots")
    if not path.is_file():
        return ToolResult("", "error", f"no such file: {args['path']}")
    raw = path.read_bytes()
    if b"\x00" in raw[:8192]:
        return ToolResult("", "error", f"binary file detected (NUL byte): {args['path']}")
    lines = raw.decode("utf-8", errors="replace").splitlines()
    start = args.get("start", 1)
    keyword = args.get("keyword")
    if keyword is not None:
        for i, line in enumerate(lines, start=1):
            if keyword in line:
                start = i
                break
        else:
            return ToolResult("", "error", f"keyword {keyword!r} not found in {args['path']}")
    count = args.get("count", len(lines))
    line_cap = ctx.config.thresholds.file_read_line
    out = []
    for i in range(start, min(start + count, len(lines) + 1)):
        line = lines[i - 1]
        if len(line) > line_cap:
            line = line[:line_cap] + f" ...[+{len(line) - line_cap} chars]"
        out.append(f"{i}: {line}")
    return ToolResult("", "ok", "\n".join(out))


def _atomic_write(path: Path, content: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8", newline="") as fh:
        fh.write(content)
    tmp.replace(path)


def _exec_file_write(args: dict, ctx: "SessionState") -> ToolResult:
    path = resolve_write_path(args["path"], ctx)
    if path is None:
        ctx.sandbox_violation = True
        return ToolResult("", "rejected", f"sandbox violation: write to {args['path']!r} is outside allowed roots")
    path.parent.mkdir(parents=True, exist_ok=True)
    content = args["content"]
    _atomic_write(path, content)
    return ToolResult("", "ok", f"wrote {len(content.encode('utf-8'))} bytes to {args['path']}")


def _exec_file_patch(args: dict, ctx: "SessionState") -> ToolResult:
    path = resolve_write_path(args["path"], ctx)
    if path is None:
        ctx.sandbox_violation = True
        return ToolResult("", "rejected", f"sandbox violation: write to {args['path']!r} is outside allowed roots")
    if not path.is_file():
        return ToolResult("", "error", f"no such file: {args['path']}")
    old, new = args["old_content"], args["new_content"]
    if old == new:
        return ToolResult("", "rejected", "old_content equals new_content (no-op patch)")
    # newline="" keeps CR/CRLF bytes intact; only the matched span may change
    with path.open("r", encoding="utf-8", newline="") as fh:
        text = fh.read()
    matches = text.count(old)
    if matches != 1:
        return ToolResult("", "error", f"{matches} matches for old_content; need exactly 1; file unchanged")
    _atomic_write(path, text.replace(old, new, 1))
    return ToolResult("", "ok", f"patched {args['path']}: 1 occurrence replaced")


def _exec_code_run(args: dict, ctx: "SessionState") -> ToolResult:
    language = args["language"]
    timeout = args.get("timeout", ctx.config.code_run_timeout_s)
    if language == "python":
        argv = [sys.executable, "-c", args["source"]]
    else:
        bash = "/bin/bash"
        if not Path(bash).exists():
            return ToolResult("", "error", "bash interpreter not available")
        argv = [bash, "-c", args["source"]]
    try:
        proc = subprocess.run(
            argv,
            cwd=ctx.workspace_dir,
            capture_output=True,
            text=True,
            timeout=timeout,
        )
    except subprocess.TimeoutExpired as exc:
        partial = (exc.stdout or "") if isinstance(exc.stdout, str) else ""
        return ToolResult("", "error", f"timed out after {timeout}s\n{partial}\n[exit unknown]")
    except OSError as exc:
        return ToolResult("", "error", f"interpreter launch failed: {exc}")
    payload = f"{proc.stdout}\n[exit {proc.returncode}]"
    if proc.stderr:
        payload += f"\n[stderr]\n{proc.stderr}"
    status = "ok" if proc.returncode == 0 else "error"
    return ToolResult("", status, payload)


def _exec_ask_user(args: dict, ctx: "SessionState") -> ToolResult:
    question = args["question"]
    if not question.strip():
        return ToolResult("", "rejected", "empty question")
    channel = ctx.reply_channel
    if channel is None:
        if ctx.mode == "interact" and sys.stdin.isatty():
            channel = lambda q: input(f"{q}\n> ")  # noqa: E731 - terminal fallback
        else:
            return ToolResult("", "error", "no human available to answer in this mode")
    try:
        reply = channel(question)
    except Exception as exc:
        return ToolResult("", "error", f"reply channel failed: {exc}")
    return ToolResult("", "ok", reply)


def _exec_update_checkpoint(args: dict, ctx: "SessionState") -> ToolResult:
    key_info = args["key_info"]
    cap = ctx.config.thresholds.key_info_cap
    if len(key_info) > cap:
        return ToolResult("", "rejected", f"key_info is {len(key_info)} chars; cap is {cap}")
    ctx.anchor.key_info = key_info
    return ToolResult("", "ok", "working checkpoint updated" if key_info else "working checkpoint cleared")


def _exec_long_term_update(args: dict, ctx: "SessionState") -> ToolResult:
    from .memory import ConsolidationCandidate, Deferral

    evidence = tuple(args["evidence"])
    bad = [e for e in evidence if e not in ctx.ok_result_ids]
    if not evidence or bad:
        return ToolResult(
            "",
            "rejected",
            "no execution, no memory: evidence must cite ok tool results from this "
            f"session (unverified: {bad or 'none cited'})",
        )
    candidate = ConsolidationCandidate(
        target_layer=args["target_layer"],
        title=args["title"],
        body=args["body"],
        evidence=evidence,
        source_session=ctx.session_id,
    )
    outcome = ctx.store.commit(candidate, evidence_resolver=lambda ids: all(i in ctx.ok_result_ids for i in ids))
    if isinstance(outcome, Deferral):
        if outcome.rule == "no-evidence":
            return ToolResult("", "rejected", f"no execution, no memory: {outcome.detail}")
        return ToolResult("", "ok", f"deferred: {outcome.rule} ({outcome.detail})")
    return ToolResult("", "ok", f"committed to {outcome.path} (index key: {outcome.l1_key})")


def _exec_web_scan(args: dict, ctx: "SessionState") -> ToolResult:
    if ctx.browser is None:
        return ToolResult("", "error", "no browser attached to this session")
    return ctx.browser.web_scan(url=args.get("url"), mode=args["mode"])


def _exec_web_execute_js(args: dict, ctx: "SessionState") -> ToolResult:
    if ctx.browser is None:
        return ToolResult("", "error", "no browser attached to this session")
    save_to = args.get("save_to_file")
    resolved = None
    if save_to is not None:
        resolved = resolve_write_path(save_to, ctx)
        if resolved is None:
            ctx.sandbox_violation = True
            return ToolResult("", "rejected", f"sandbox violation: write to {save_to!r} is outside allowed roots")
    return ctx.browser.web_execute_js(args["script"], save_to_file=resolved)


_EXECUTORS: dict[str, Callable[[dict, "SessionState"], ToolResult]] = {
    "file_read": _exec_file_read,
    "file_write": _exec_file_write,
    "file_patch": _exec_file_patch,
    "code_run": _exec_code_run,
    "ask_user": _exec_ask_user,
    "update_working_checkpoint": _exec_update_checkpoint,
    "start_long_term_update": _exec_long_term_update,
    "web_scan": _exec_web_scan,
    "web_execute_js": _exec_web_execute_js,
}


def _threshold_for(call: ToolCall, ctx: "SessionState") -> int:
    th = ctx.config.thresholds
    if call.name == "web_scan" and call.arguments.get("mode") == "html":
        return th.web_scan_html
    by_name = {
        "code_run": th.code_run,
        "web_execute_js": th.web_execute_js,
        "web_scan": th.web_scan_text_only,
        "file_read": th.file_read_total,
    }
    return by_name.get(call.name, th.default)


def _park_side_channel(call: ToolCall, full_payload: str, ctx: "SessionState") -> str | None:
    try:
        outdir = Path(ctx.workspace_dir) / ".tool_output"
        outdir.mkdir(parents=True, exist_ok=True)
        dest = outdir / f"{call.id or 'call'}_{call.name}.txt"
        dest.write_text(full_payload, encoding="utf-8")
        return str(dest)
    except OSError:
        return None


def dispatch(call: ToolCall, ctx: "SessionState") -> ToolResult:
    """Route one validated call to its executor; always returns a result."""
    schema = schema_index(ctx.schemas).get(call.name)
    if schema is None:
        return ToolResult(call.id, "rejected", f"unknown tool {call.name!r}", tool_name=call.name)

    reason = validate_arguments(schema, call.arguments)
    if reason is not None:
        return ToolResult(call.id, "rejected", f"invalid arguments: {reason}", tool_name=call.name)

    if call.name == "code_run":
        if ctx.code_run_used_this_turn:
            return ToolResult(
                call.id,
                "rejected",
                "policy violation: code_run is restricted to one invocation per turn",
                tool_name=call.name,
            )
        ctx.code_run_used_this_turn = True

    try:
        result = _EXECUTORS[call.name](call.arguments, ctx)
    except Exception as exc:  # executor crash still yields a structured result
        result = ToolResult(call.id, "error", f"executor failed: {exc}")

    result.call_id = call.id
    result.tool_name = call.name
    limit = _threshold_for(call, ctx)
    over_hard = len(result.payload) > limit + MARKER_ALLOWANCE
    over_soft = len(result.payload) > limit and not result.truncated
    if over_hard or over_soft:
        full = result.payload
        result.payload, result.truncated = truncate_head_tail(full, limit)
        if result.side_channel is None:
            result.side_channel = _park_side_channel(call, full, ctx)
    assert len(result.payload) <= limit + MARKER_ALLOWANCE
    return result
