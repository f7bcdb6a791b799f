#!/usr/bin/env python3
"""End-to-end demo: one session against an inline scripted backend.

Shows the loop working offline: tool dispatch, anchor injection, transcript
archiving. Run from the repo root:

    python scripts/run_scripted_demo.py
"""

from __future__ import annotations

import tempfile
from pathlib import Path

from leanagent.config import RuntimeConfig
from leanagent.gateway import ModelReply, ScriptStep, ScriptedBackend
from leanagent.kernel import run_session
from leanagent.memory import MemoryStore
from leanagent.messages import ToolCall


def main() -> None:
    steps = [
        ScriptStep(
            reply=ModelReply(
                tool_calls=(
                    ToolCall("c1", "file_write", {"path": "notes.txt", "content": "alpha\nbeta\ngamma\n"}),
                )
            )
        ),
        ScriptStep(
            reply=ModelReply(
                tool_calls=(ToolCall("c2", "file_read", {"path": "notes.txt", "keyword": "beta"}),)
            ),
            expect_substring="<key_info>",  # anchor must be in the request by now
        ),
        ScriptStep(
            reply=ModelReply(
                tool_calls=(
                    ToolCall("c3", "code_run", {"language": "bash", "source": "wc -l < notes.txt"}),
                )
            )
        ),
        ScriptStep(reply=ModelReply(text="notes.txt written and verified: 3 lines, 'beta' on line 2")),
    ]

    with tempfile.TemporaryDirectory(prefix="demo-") as base:
        workspace = Path(base) / "ws"
        workspace.mkdir()
        store = MemoryStore(Path(base) / "memory")
        outcome = run_session(
            "write a three-line notes file and verify it",
            "interact",
            RuntimeConfig.defaults(),
            backend=ScriptedBackend(steps),
            store=store,
            workspace_dir=workspace,
        )
        print(f"reason:      {outcome.reason.value}")
        print(f"turns:       {outcome.turns}")
        print(f"chars sent:  {outcome.chars_sent}")
        print(f"final text:  {outcome.final_text}")
        print(f"transcript:  {outcome.transcript_path}")
        print("\ntranscript roles:")
        for m in store.read_archive(outcome.session_id):
            head = m.content.replace("\n", " ")[:72]
            print(f"  {m.role:9s} {head}")


if __name__ == "__main__":
    main()
