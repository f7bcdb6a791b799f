"""Representation shift for repeated task families:
natural-language execution -> distilled procedure -> registered script.

The tool layer is fixed; only the knowledge layer evolves. Stage never
regresses automatically. Task families are recognized by normalized keyword
overlap against L1 keys — deliberately isolated in `task_signature` /
`match_entry` so a smarter matcher can swap in.
"""

from __future__ import annotations

import json
import re
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

from .gateway import Backend, ChatRequest
from .ledger import SchemaBlock
from .memory import ConsolidationCandidate, Deferral, L1Entry, MemoryStore, slugify
from .messages import Message, user

STAGES = ("natural_language", "sop", "codified")

_STOPWORDS = {
    "a", "an", "the", "and", "or", "of", "in", "on", "to", "for", "with",
    "into", "from", "by", "at", "is", "are", "this", "that", "it", "its",
    "most", "recent", "five", "each", "all", "then", "their",
}


def task_signature(task: str) -> frozenset[str]:
    """Normalized keyword set of a task string."""
    tokens = re.findall(r"[a-z0-9]+", task.lower())
    return frozenset(t for t in tokens if t not in _STOPWORDS and len(t) > 1)


def _entry_tokens(entry: L1Entry) -> frozenset[str]:
    return task_signature(f"{entry.key.replace('-', ' ')} {entry.hint}")


def match_entry(task: str, entries: Sequence[L1Entry]) -> L1Entry | None:
    """Best-overlap SOP entry for a task family; None when nothing matches."""
    signature = task_signature(task)
    best: tuple[int, str, L1Entry] | None = None
    for entry in entries:
        if entry.kind != "sop":
            continue
        overlap = len(signature & _entry_tokens(entry))
        if overlap >= 2 and (best is None or (overlap, entry.key) > (best[0], best[1])):
            best = (overlap, entry.key, entry)
    return best[2] if best else None


@dataclass
class RunStats:
    timestamp: float
    turns: int
    chars: int
    outcome: str
    stage: str


@dataclass
class EvolutionRecord:
    task_signature: list[str]
    stage: str = "natural_language"
    sop_path: str | None = None
    script_path: str | None = None
    run_stats: list[RunStats] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.stage == "sop" and not self.sop_path:
            raise ValueError("sop stage requires sop_path")
        if self.stage == "codified" and not self.script_path:
            raise ValueError("codified stage requires script_path")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EvolutionRecord":
        stats = [RunStats(**s) for s in data.get("run_stats", [])]
        return cls(
            task_signature=list(data["task_signature"]),
            stage=data.get("stage", "natural_language"),
            sop_path=data.get("sop_path"),
            script_path=data.get("script_path"),
            run_stats=stats,
        )


def record_path_for(store: MemoryStore, sop_key: str) -> Path:
    """Sidecar document next to its procedure."""
    return store.layout.l3_dir / f"{sop_key}.evo.json"


def load_record(store: MemoryStore, sop_key: str) -> EvolutionRecord | None:
    path = record_path_for(store, sop_key)
    if not path.exists():
        return None
    return EvolutionRecord.from_dict(json.loads(path.read_text(encoding="utf-8")))


def save_record(store: MemoryStore, sop_key: str, record: EvolutionRecord) -> None:
    path = record_path_for(store, sop_key)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(record.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    tmp.replace(path)


def record_run(record: EvolutionRecord, stats: RunStats) -> EvolutionRecord:
    record.run_stats.append(stats)
    return record


@dataclass(frozen=True)
class StageDecision:
    stage: str
    attachments: str
    sop_key: str | None = None


def classify_stage(task: str, store: MemoryStore) -> StageDecision:
    """Route the task family through L1; pure in (task, store state)."""
    entry = match_entry(task, store.l1_entries())
    if entry is None:
        return StageDecision(stage="natural_language", attachments="")
    record = load_record(store, entry.key)
    if record and record.stage == "codified" and record.script_path and Path(record.script_path).exists():
        attachments = (
            f"[memory routing] A registered script handles this task family: "
            f"{record.script_path}. Prefer running it via code_run over manual steps.\n"
            f"Procedure reference: {entry.pointer}"
        )
        return StageDecision(stage="codified", attachments=attachments, sop_key=entry.key)
    attachments = (
        f"[memory routing] A verified procedure exists for this task family: "
        f"{entry.pointer}. Read it with file_read before acting."
    )
    return StageDecision(stage="sop", attachments=attachments, sop_key=entry.key)


# --- distillation -------------------------------------------------------------


def ok_evidence_ids(transcript: Sequence[Message]) -> list[str]:
    return [m.tool_call_id for m in transcript if m.role == "tool" and m.status == "ok" and m.tool_call_id]


def should_distill(reason: str, recovered: bool) -> bool:
    """Milestones: a completed session, or recovery after a strategy switch."""
    return reason == "completed" or recovered


def distill_sop(
    transcript: Sequence[Message],
    backend: Backend,
    *,
    task: str,
    source_session: str,
) -> ConsolidationCandidate | None:
    """Distill a transcript into a procedure candidate.

    Evidence lists only ok result ids; a transcript with zero verified results
    yields nothing (no execution, no memory). Exploratory dead branches are
    excluded by construction: the prompt feeds only successful steps.
    """
    evidence = ok_evidence_ids(transcript)
    if not evidence:
        return None
    ok_steps = []
    for m in transcript:
        if m.role == "tool" and m.status == "ok":
            ok_steps.append(f"[{m.tool_call_id}] {m.tool_name}: {m.content[:400]}")
    prompt = (
        "Distill the verified steps below into a reusable procedure with four "
        "sections: Preconditions, Key steps, Failure cases, Recovery. Omit "
        "anything that was not verified.\n\n"
        f"Task: {task}\n\nVerified steps:\n" + "\n".join(ok_steps)
    )
    request = ChatRequest(
        system_prompt="You write terse, reusable operating procedures.",
        messages=(user(prompt),),
        tool_schemas=SchemaBlock(full=None, reminder="distillation pass: no tools", schema_hash=""),
    )
    reply = backend.complete(request)
    title = _title_from(reply.text, task)
    return ConsolidationCandidate(
        target_layer="L3",
        title=title,
        body=reply.text,
        evidence=tuple(evidence),
        source_session=source_session,
    )


def _title_from(sop_body: str, task: str) -> str:
    for line in sop_body.splitlines():
        stripped = line.strip().lstrip("#").strip()
        if stripped:
            return stripped[:80]
    return task[:80]


# --- codification ---------------------------------------------------------------


@dataclass(frozen=True)
class CodifyOutcome:
    registered: bool
    script_path: str | None
    detail: str


def successful_sop_runs(record: EvolutionRecord) -> int:
    return sum(1 for s in record.run_stats if s.stage == "sop" and s.outcome == "completed")


def codify_sop(
    store: MemoryStore,
    sop_key: str,
    backend: Backend,
    *,
    min_runs: int = 2,
    smoke_timeout_s: float = 30.0,
) -> CodifyOutcome:
    """Crystallize a proven procedure into a standalone script.

    Gated on `min_runs` successful sop-stage runs. The generated script is
    smoke-executed once (`--smoke` in an empty sandbox dir, must exit 0)
    before registration; failures quarantine the script and leave the stage
    unchanged.
    """
    record = load_record(store, sop_key)
    if record is None:
        return CodifyOutcome(False, None, f"no evolution record for {sop_key}")
    if record.stage == "codified":
        return CodifyOutcome(True, record.script_path, "already codified")
    runs = successful_sop_runs(record)
    if runs < min_runs:
        return CodifyOutcome(False, None, f"declined: {runs}/{min_runs} successful procedure runs")

    sop_path = store.layout.root / (record.sop_path or "")
    if not sop_path.is_file():
        return CodifyOutcome(False, None, f"procedure document missing: {record.sop_path}")
    sop_text = sop_path.read_text(encoding="utf-8")

    prompt = (
        "Turn this verified procedure into a standalone Python script. The "
        "script must support a --smoke flag that validates its imports and "
        "exits 0 without touching any files. Reply with the script source "
        "only.\n\n" + sop_text
    )
    request = ChatRequest(
        system_prompt="You compile procedures into small, dependency-free Python scripts.",
        messages=(user(prompt),),
        tool_schemas=SchemaBlock(full=None, reminder="codegen pass: no tools", schema_hash=""),
    )
    reply = backend.complete(request)
    source = _strip_fences(reply.text)

    script_path = store.layout.scripts_dir / f"{sop_key}.py"
    tmp = script_path.with_name(script_path.name + ".tmp")
    tmp.write_text(source, encoding="utf-8")

    with tempfile.TemporaryDirectory(prefix="smoke-") as sandbox:
        try:
            proc = subprocess.run(
                [sys.executable, str(tmp), "--smoke"],
                cwd=sandbox,
                capture_output=True,
                text=True,
                timeout=smoke_timeout_s,
            )
            smoke_ok = proc.returncode == 0
            detail = proc.stderr.strip() or proc.stdout.strip()
        except (subprocess.TimeoutExpired, OSError) as exc:
            smoke_ok = False
            detail = str(exc)

    if not smoke_ok:
        quarantine = store.layout.scripts_dir / "quarantine"
        quarantine.mkdir(exist_ok=True)
        tmp.replace(quarantine / script_path.name)
        return CodifyOutcome(False, None, f"smoke run failed, script quarantined: {detail[:200]}")

    tmp.replace(script_path)
    record.stage = "codified"
    record.script_path = str(script_path)
    save_record(store, sop_key, record)
    with store.locked():
        entry = next((e for e in store.l1_entries() if e.key == sop_key and e.kind == "sop"), None)
        hint = (entry.hint if entry else f"procedure {sop_key}")
        suffix = " [codified script available]"
        if not hint.endswith(suffix):
            hint = (hint + suffix)[: store.hint_cap]
        store.upsert_l1(L1Entry(key=sop_key, kind="sop", pointer=(entry.pointer if entry else record.sop_path or ""), hint=hint))
    return CodifyOutcome(True, str(script_path), "registered")


def _strip_fences(text: str) -> str:
    m = re.search(r"```(?:python)?\n(.*?)```", text, re.DOTALL)
    return m.group(1) if m else text


# --- post-session driver ----------------------------------------------------------


def run_post_session(
    store: MemoryStore,
    backend: Backend,
    *,
    task: str,
    session_id: str,
    transcript: Sequence[Message],
    outcome_reason: str,
    turns: int,
    chars: int,
    stage: str,
    sop_key: str | None,
    recovered: bool = False,
    min_runs_to_codify: int = 2,
) -> dict:
    """Distill / record / codify after a session, per milestone triggers."""
    report: dict = {"distilled": False, "codified": False, "recorded": False}
    if sop_key:
        with store.locked():  # records live in the store: single-writer
            record = load_record(store, sop_key)
            if record is not None:
                record_run(record, RunStats(timestamp=time.time(), turns=turns, chars=chars,
                                            outcome=outcome_reason, stage=stage))
                save_record(store, sop_key, record)
                report["recorded"] = True

    if stage == "natural_language" and should_distill(outcome_reason, recovered):
        candidate = distill_sop(transcript, backend, task=task, source_session=session_id)
        if candidate is not None:
            # default resolver checks the session's L4 archive, written by run_session
            committed = store.commit(candidate)
            if not isinstance(committed, Deferral):
                report["distilled"] = True
                report["sop_key"] = committed.l1_key
                new_record = EvolutionRecord(
                    task_signature=sorted(task_signature(task)),
                    stage="sop",
                    sop_path=committed.path,
                )
                record_run(new_record, RunStats(timestamp=time.time(), turns=turns, chars=chars,
                                                outcome=outcome_reason, stage="natural_language"))
                save_record(store, committed.l1_key, new_record)

    if stage == "sop" and sop_key:
        result = codify_sop(store, sop_key, backend, min_runs=min_runs_to_codify)
        report["codified"] = result.registered
        report["codify_detail"] = result.detail
    return report
