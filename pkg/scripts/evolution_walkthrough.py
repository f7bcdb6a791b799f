#!/usr/bin/env python3
"""Replay the bundled task family through all three execution stages.

Stage 1 solves the task by exploration, gets distilled into a procedure,
two procedure-guided runs unlock codification, and the final run invokes
the registered script. Prints the turns/chars trajectory.

    python scripts/evolution_walkthrough.py
"""

from __future__ import annotations

import tempfile
from pathlib import Path

from leanagent import evolution
from leanagent.config import RuntimeConfig
from leanagent.gateway import ScriptedBackend
from leanagent.kernel import run_session
from leanagent.memory import MemoryStore

REPO = Path(__file__).resolve().parents[1]
FIXTURES = REPO / "tests" / "fixtures" / "evolution"
TASK = "Digest the merged bugfix entries from the pr records data file into report.json"

PR_LINE = "2025-11-03 #4821 merged bugfix: parser crash on empty row (module: ingest)"


def backend_from(name: str, **subs) -> ScriptedBackend:
    text = (FIXTURES / name).read_text()
    for key, value in subs.items():
        text = text.replace("{{" + key + "}}", value)
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        fh.write(text)
        path = fh.name
    return ScriptedBackend.from_file(path)


def family_workspace(base: Path) -> Path:
    (base / "data").mkdir(parents=True)
    lines = [PR_LINE if i % 2 == 0 else f"2025-10-{28 - i % 20:02d} #{4800 - i} opened feature: row {i}" for i in range(40)]
    (base / "data" / "pr_records.txt").write_text("\n".join(lines) + "\n")
    return base


def main() -> None:
    config = RuntimeConfig.defaults()
    rows = []
    with tempfile.TemporaryDirectory(prefix="walkthrough-") as base:
        root = Path(base)
        store = MemoryStore(root / "memory")

        out1 = run_session(TASK, "interact", config, backend=backend_from("natural.json"),
                           store=store, workspace_dir=family_workspace(root / "ws1"), session_id="walk-1")
        report = evolution.run_post_session(
            store, backend_from("distill.json"), task=TASK, session_id="walk-1",
            transcript=store.read_archive("walk-1"), outcome_reason=out1.reason.value,
            turns=out1.turns, chars=out1.chars_sent, stage="natural_language", sop_key=None,
        )
        sop_key = report["sop_key"]
        rows.append(("natural_language", out1.turns, out1.chars_sent))

        decision = evolution.classify_stage(TASK, store)
        sop_abs = str(store.layout.root / "sops" / f"{sop_key}.md")
        for n in (2, 3):
            out = run_session(f"{TASK}\n\n{decision.attachments}", "interact", config,
                              backend=backend_from("sop.json", SOP_ABS=sop_abs),
                              store=store, workspace_dir=family_workspace(root / f"ws{n}"),
                              session_id=f"walk-{n}")
            codegen = backend_from("codegen.json") if n == 3 else ScriptedBackend([])
            evolution.run_post_session(
                store, codegen, task=TASK, session_id=f"walk-{n}",
                transcript=store.read_archive(f"walk-{n}"), outcome_reason=out.reason.value,
                turns=out.turns, chars=out.chars_sent, stage="sop", sop_key=sop_key,
            )
            if n == 2:
                rows.append(("sop", out.turns, out.chars_sent))

        record = evolution.load_record(store, sop_key)
        decision = evolution.classify_stage(TASK, store)
        out3 = run_session(f"{TASK}\n\n{decision.attachments}", "interact", config,
                           backend=backend_from("codified.json", SCRIPT_PATH=record.script_path),
                           store=store, workspace_dir=family_workspace(root / "ws4"), session_id="walk-4")
        rows.append(("codified", out3.turns, out3.chars_sent))

        print(f"{'stage':<18} {'turns':>5} {'chars sent':>11}")
        for stage, turns, chars in rows:
            print(f"{stage:<18} {turns:>5} {chars:>11}")
        print(f"\nregistered script: {record.script_path}")
        print(f"index entry:       {[e.to_line() for e in store.l1_entries()][0]}")


if __name__ == "__main__":
    main()
