"""Four-layer persistent memory with validated, locked commits.

Layout under the memory root:

    meta.md           orientation document; its header section is always-on
    l1_index.md       pointer index, one line per entry (always-on)
    facts/            L2: verified facts
    sops/             L3: reusable procedures (+ sidecar evolution records)
    sessions/         L4: raw session archives, append-only JSONL
    scripts/          codified procedure artifacts
    self_improvement.md

Everything is plain human-readable text because the agent reads its own
memory through file_read; opaque storage would break the routing chain.
Only the meta header, the L1 index, and the newest self-improvement notes
are injected by default; deeper layers load on demand.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import os
import re
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

from .messages import Message

L1_LINE_RE = re.compile(r"^- \[(fact|sop|constraint)\] (\S+) → (\S+) :: (.*)$")
KINDS = ("fact", "sop", "constraint")

# Volatile content that must not be consolidated as a long-lived fact.
TRANSIENT_PATTERNS = (
    re.compile(r"/tmp/\S+"),
    re.compile(r"\d{4}-\d{2}-\d{2}T\d{2}:\d{2}"),
    re.compile(r"\bpid \d+\b", re.IGNORECASE),
)


class MemoryValidationError(Exception):
    """A store document violates its contract (hint cap, block cap)."""


class LockTimeoutError(Exception):
    """Could not acquire the single-writer lock in time; retryable."""


class NoExecutionNoMemory(Exception):
    """Candidate cites no verified execution evidence."""


@dataclass(frozen=True)
class MemoryLayout:
    root: Path

    @property
    def meta_path(self) -> Path:
        return self.root / "meta.md"

    @property
    def l1_path(self) -> Path:
        return self.root / "l1_index.md"

    @property
    def l2_dir(self) -> Path:
        return self.root / "facts"

    @property
    def l3_dir(self) -> Path:
        return self.root / "sops"

    @property
    def l4_dir(self) -> Path:
        return self.root / "sessions"

    @property
    def scripts_dir(self) -> Path:
        return self.root / "scripts"

    @property
    def self_improvement_path(self) -> Path:
        return self.root / "self_improvement.md"

    @property
    def lock_path(self) -> Path:
        return self.root / ".lock"


@dataclass(frozen=True)
class L1Entry:
    key: str
    kind: str
    pointer: str
    hint: str

    def to_line(self) -> str:
        return f"- [{self.kind}] {self.key} → {self.pointer} :: {self.hint}"


@dataclass(frozen=True)
class ConsolidationCandidate:
    target_layer: str  # L2 | L3
    title: str
    body: str
    evidence: tuple[str, ...]
    source_session: str


@dataclass(frozen=True)
class CommitReceipt:
    path: str
    l1_key: str
    amended: bool = False


@dataclass(frozen=True)
class Deferral:
    rule: str  # no-evidence | duplicate | transient-content | over-budget
    detail: str = ""


@dataclass(frozen=True)
class RouteHit:
    entry: L1Entry
    path: Path
    dangling: bool


@dataclass
class FsckReport:
    dangling: list[L1Entry] = field(default_factory=list)
    orphans: list[str] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.dangling


def slugify(title: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", title.lower()).strip("-")
    return slug or "untitled"


def normalized_body_hash(body: str) -> str:
    normalized = re.sub(r"\s+", " ", body.strip().lower())
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()


class MemoryStore:
    """Multi-process shared store: single writer via an advisory file lock."""

    def __init__(self, root: str | Path, *, always_on_cap: int = 8_000, hint_cap: int = 160,
                 self_improvement_visible: int = 20, lock_timeout_s: float = 10.0):
        self.layout = MemoryLayout(Path(root).resolve())
        self.always_on_cap = always_on_cap
        self.hint_cap = hint_cap
        self.self_improvement_visible = self_improvement_visible
        self.lock_timeout_s = lock_timeout_s
        self._ensure_layout()

    def _ensure_layout(self) -> None:
        lay = self.layout
        for d in (lay.root, lay.l2_dir, lay.l3_dir, lay.l4_dir, lay.scripts_dir):
            d.mkdir(parents=True, exist_ok=True)
        if not lay.meta_path.exists():
            template = resources.files("leanagent.assets").joinpath("meta_memory.md").read_text()
            lay.meta_path.write_text(template, encoding="utf-8")
        if not lay.l1_path.exists():
            lay.l1_path.write_text("", encoding="utf-8")

    # --- locking ---------------------------------------------------------

    @contextmanager
    def locked(self, timeout_s: float | None = None) -> Iterator[None]:
        """Advisory exclusive lock; readers stay lock-free by design.

        Not reentrant: nesting within one process deadlocks until timeout.
        """
        timeout = self.lock_timeout_s if timeout_s is None else timeout_s
        deadline = time.monotonic() + timeout
        fd = os.open(self.layout.lock_path, os.O_CREAT | os.O_RDWR)
        try:
            while True:
                try:
                    fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
                    break
                except BlockingIOError:
                    if time.monotonic() >= deadline:
                        raise LockTimeoutError(f"store lock not acquired within {timeout}s")
                    time.sleep(0.01)
            yield
        finally:
            os.close(fd)

    # --- always-on block ---------------------------------------------------

    def meta_summary(self) -> str:
        """Header section of meta.md, up to the first '---' line."""
        text = self.layout.meta_path.read_text(encoding="utf-8")
        return text.split("\n---\n", 1)[0].rstrip()

    def l1_entries(self) -> list[L1Entry]:
        entries = []
        for n, line in enumerate(self.layout.l1_path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            m = L1_LINE_RE.match(line)
            if m is None:
                raise MemoryValidationError(f"l1_index.md line {n}: unparseable entry {line!r}")
            kind, key, pointer, hint = m.groups()
            if len(hint) > self.hint_cap:
                raise MemoryValidationError(
                    f"l1_index.md line {n}: hint is {len(hint)} chars, cap is {self.hint_cap}"
                )
            entries.append(L1Entry(key=key, kind=kind, pointer=pointer, hint=hint))
        return entries

    def load_always_on(self) -> str:
        """The block injected into every system prompt: meta header + L1 index
        + newest self-improvement notes. Bounded by `always_on_cap` regardless
        of how large the deeper layers grow."""
        parts = [self.meta_summary(), "", "## memory index"]
        entries = self.l1_entries()
        if entries:
            parts.extend(e.to_line() for e in entries)
        else:
            parts.append("(empty)")
        notes = self.read_self_improvement()[-self.self_improvement_visible:]
        if notes:
            parts.append("")
            parts.append("## self-improvement notes")
            parts.extend(notes)
        block = "\n".join(parts)
        if len(block) > self.always_on_cap:
            raise MemoryValidationError(
                f"always-on block is {len(block)} chars, cap is {self.always_on_cap}; curate the L1 index"
            )
        return block

    # --- routing -----------------------------------------------------------

    def route(self, keyword: str) -> list[RouteHit]:
        """L1 keyword match; the content itself is read later via file_read."""
        needle = keyword.strip().lower()
        hits = []
        if not needle:
            return hits
        for entry in self.l1_entries():
            haystack = f"{entry.key} {entry.hint}".lower()
            if needle in haystack:
                path = self.layout.root / entry.pointer
                hits.append(RouteHit(entry=entry, path=path, dangling=not path.exists()))
        return hits

    # --- commits -----------------------------------------------------------

    def _hash_ledger_path(self, target_dir: Path) -> Path:
        return target_dir / ".hashes.json"

    def _existing_hashes(self, target_dir: Path) -> dict[str, str]:
        path = self._hash_ledger_path(target_dir)
        if not path.exists():
            return {}
        return json.loads(path.read_text(encoding="utf-8"))

    def _record_hash(self, target_dir: Path, body_hash: str, doc_name: str) -> None:
        hashes = self._existing_hashes(target_dir)
        hashes[body_hash] = doc_name
        path = self._hash_ledger_path(target_dir)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(hashes, indent=0, sort_keys=True), encoding="utf-8")
        os.replace(tmp, path)

    def commit(
        self,
        candidate: ConsolidationCandidate,
        *,
        evidence_resolver: Callable[[Sequence[str]], bool] | None = None,
    ) -> CommitReceipt | Deferral:
        """Validated, locked, incremental write into L2/L3 plus the L1 index.

        Write order is target-then-index so a crash can never leave a pointer
        without its target. Deferral rules: no-evidence, duplicate,
        transient-content.
        """
        if candidate.target_layer not in ("L2", "L3"):
            raise ValueError(f"unknown target layer {candidate.target_layer!r}")
        if not candidate.title.strip() or not candidate.body.strip():
            return Deferral("no-evidence", "empty title or body")
        if not candidate.evidence:
            return Deferral("no-evidence", "candidate cites no tool results")
        resolver = evidence_resolver or (lambda ids: self._evidence_ok_in_archive(candidate.source_session, ids))
        if not resolver(candidate.evidence):
            return Deferral("no-evidence", "evidence does not resolve to ok tool results")
        if candidate.target_layer == "L2":
            for pattern in TRANSIENT_PATTERNS:
                m = pattern.search(candidate.body)
                if m:
                    return Deferral("transient-content", f"volatile span {m.group(0)!r}")

        target_dir = self.layout.l2_dir if candidate.target_layer == "L2" else self.layout.l3_dir
        kind = "fact" if candidate.target_layer == "L2" else "sop"
        body_hash = normalized_body_hash(candidate.body)

        with self.locked():
            if body_hash in self._existing_hashes(target_dir):
                return Deferral("duplicate", "normalized body already stored")

            key = slugify(candidate.title)
            doc_path = target_dir / f"{key}.md"
            amended = doc_path.exists()
            if amended:
                existing = doc_path.read_text(encoding="utf-8")
                new_text = f"{existing.rstrip()}\n\n## update ({candidate.source_session})\n\n{candidate.body.strip()}\n"
            else:
                new_text = f"# {candidate.title.strip()}\n\n{candidate.body.strip()}\n"

            tmp = doc_path.with_name(doc_path.name + ".tmp")
            tmp.write_text(new_text, encoding="utf-8")
            os.replace(tmp, doc_path)

            pointer = str(doc_path.relative_to(self.layout.root))
            hint = self._make_hint(candidate)
            self.upsert_l1(L1Entry(key=key, kind=kind, pointer=pointer, hint=hint))
            # hash ledger last: losing it to a crash only re-allows an amend
            self._record_hash(target_dir, body_hash, doc_path.name)
            return CommitReceipt(path=pointer, l1_key=key, amended=amended)

    def _make_hint(self, candidate: ConsolidationCandidate) -> str:
        # Existence-level only: category + title, never substantive content.
        noun = "procedure" if candidate.target_layer == "L3" else "fact"
        hint = f"verified {noun}: {candidate.title.strip()}"
        return hint[: self.hint_cap]

    def upsert_l1(self, entry: L1Entry) -> None:
        """Add or update one index line atomically; caller holds the lock."""
        lines = [l for l in self.layout.l1_path.read_text(encoding="utf-8").splitlines() if l.strip()]
        replaced = False
        for i, line in enumerate(lines):
            m = L1_LINE_RE.match(line)
            if m and m.group(2) == entry.key and m.group(1) == entry.kind:
                lines[i] = entry.to_line()
                replaced = True
                break
        if not replaced:
            lines.append(entry.to_line())
        tmp = self.layout.l1_path.with_name("l1_index.md.tmp")
        tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
        os.replace(tmp, self.layout.l1_path)

    def _evidence_ok_in_archive(self, session_id: str, ids: Sequence[str]) -> bool:
        try:
            messages = self.read_archive(session_id)
        except FileNotFoundError:
            return False
        ok_ids = {m.tool_call_id for m in messages if m.role == "tool" and m.status == "ok"}
        return bool(ids) and all(i in ok_ids for i in ids)

    # --- session archive (L4) ---------------------------------------------

    def archive_session(self, session_id: str, transcript: Iterable[Message]) -> Path:
        """Append-only: duplicate ids get a numeric suffix, never overwrite."""
        base = self.layout.l4_dir / f"{session_id}.jsonl"
        path = base
        n = 2
        while path.exists():
            path = self.layout.l4_dir / f"{session_id}-{n}.jsonl"
            n += 1
        tmp = path.with_name(path.name + ".tmp")
        with tmp.open("w", encoding="utf-8") as fh:
            for m in transcript:
                fh.write(m.serialize() + "\n")
        os.replace(tmp, path)
        return path

    def read_archive(self, session_id: str) -> list[Message]:
        path = self.layout.l4_dir / f"{session_id}.jsonl"
        if not path.exists():
            raise FileNotFoundError(f"no archive for session {session_id}")
        out = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                out.append(Message.from_wire(json.loads(line)))
        return out

    def list_archives(self) -> list[str]:
        return sorted(p.name for p in self.layout.l4_dir.glob("*.jsonl"))

    # --- condensation --------------------------------------------------------

    def condense(self, sop_text: str, word_budget: int, backend) -> str | Deferral:
        """Model-written condensation under a word budget; one retry, then defer.

        Stored alongside the source by the caller, never replacing it.
        """
        from .gateway import ChatRequest
        from .ledger import SchemaBlock
        from .messages import user

        if not sop_text.strip():
            raise ValueError("cannot condense an empty procedure")
        prompt = (
            f"Condense the following procedure to at most {word_budget} words. "
            "Keep only high-density, action-guiding rules; drop background and "
            f"definitions.\n\n{sop_text}"
        )
        block = SchemaBlock(full=None, reminder="condensation pass: no tools", schema_hash="")
        for attempt in range(2):
            request = ChatRequest(
                system_prompt="You compress procedures without losing operative rules.",
                messages=(user(prompt if attempt == 0 else prompt + "\n\nBe stricter: hard word limit."),),
                tool_schemas=block,
            )
            reply = backend.complete(request)
            if len(reply.text.split()) <= word_budget:
                return reply.text
        return Deferral("over-budget", f"condensation exceeded {word_budget} words twice")

    # --- self-improvement log -------------------------------------------------

    def append_self_improvement(self, kind: str, text: str) -> None:
        if kind not in ("error_correction", "user_preference", "success_pattern"):
            raise ValueError(f"unknown self-improvement kind {kind!r}")
        if not text.strip():
            raise ValueError("self-improvement entry must be non-empty")
        line = f"- [{kind}] {' '.join(text.split())}"
        with self.layout.self_improvement_path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    def read_self_improvement(self) -> list[str]:
        path = self.layout.self_improvement_path
        if not path.exists():
            return []
        return [l for l in path.read_text(encoding="utf-8").splitlines() if l.strip()]

    # --- integrity --------------------------------------------------------------

    def fsck(self) -> FsckReport:
        """Referential integrity: every L1 pointer must resolve to a file."""
        report = FsckReport()
        pointed = set()
        for entry in self.l1_entries():
            target = self.layout.root / entry.pointer
            pointed.add(target.resolve())
            if not target.exists():
                report.dangling.append(entry)
        for d in (self.layout.l2_dir, self.layout.l3_dir):
            for p in sorted(d.glob("*.md")):
                if p.name.endswith(".condensed.md") or p.name.endswith(".tmp"):
                    continue
                if p.resolve() not in pointed:
                    report.orphans.append(str(p.relative_to(self.layout.root)))
        return report
