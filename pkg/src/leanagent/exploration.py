"""Autonomous exploration: skill tree, curriculum scoring, planning,
sandboxed execution with atomic consolidation, and reflection-based weight
adaptation.

Scoring: S = w_b*B + w_d*D + w_u*U + w_i*I over breadth, depth, utility,
innovation, each on a 0-10 scale. Breadth rewards filling below-average
categories, depth rewards enhancing frequently-invoked skills; utility and
innovation come from the model. Planning and execution are strictly
separated: the planner persists a task list and yields.
"""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Sequence

from .gateway import Backend, ChatRequest
from .ledger import SchemaBlock
from .memory import MemoryStore
from .messages import user

SKILL_TAG_RE = re.compile(r'<skill\s+category="([^"]*)"\s+name="([^"]*)"(?:\s+scripts="([^"]*)")?\s*/>')
USAGE_TAG_RE = re.compile(r'<usage\s+skill="([^"]*)"\s+delta="(\d+)"\s*/>')

IMPROVEMENT_KINDS = ("error_correction", "user_preference", "success_pattern")


class PlanningError(Exception):
    """Candidate set failed the category-spread constraint after a retry."""


class UsageMonotonicityError(Exception):
    """An operation tried to decrease a usage counter."""


@dataclass
class Skill:
    name: str
    scripts: list[str] = field(default_factory=list)
    usage_count: int = 0
    created_at: float = 0.0
    last_used_at: float = 0.0
    predicted_score: float | None = None
    score_breakdown: dict[str, float] | None = None


@dataclass
class SkillTree:
    categories: dict[str, list[Skill]] = field(default_factory=dict)

    def all_skills(self) -> list[Skill]:
        return [s for skills in self.categories.values() for s in skills]

    def find(self, skill_name: str) -> Skill | None:
        for s in self.all_skills():
            if s.name == skill_name:
                return s
        return None

    def category_counts(self) -> dict[str, int]:
        return {c: len(skills) for c, skills in self.categories.items()}

    def mean_count(self) -> float:
        counts = self.category_counts()
        return sum(counts.values()) / len(counts) if counts else 0.0

    def max_usage(self) -> int:
        skills = self.all_skills()
        return max((s.usage_count for s in skills), default=0)

    def add_category(self, name: str) -> None:
        self.categories.setdefault(name, [])

    def add_skill(self, category: str, skill: Skill) -> None:
        self.add_category(category)
        if any(s.name == skill.name for s in self.categories[category]):
            raise ValueError(f"skill {skill.name!r} already exists in {category!r}")
        self.categories[category].append(skill)

    def bump_usage(self, skill_name: str, delta: int, now: float) -> None:
        if delta < 0:
            raise UsageMonotonicityError(f"usage delta must be >= 0, got {delta}")
        skill = self.find(skill_name)
        if skill is None:
            return
        skill.usage_count += delta
        skill.last_used_at = now

    def to_dict(self) -> dict:
        return {"categories": {c: [asdict(s) for s in skills] for c, skills in self.categories.items()}}

    @classmethod
    def from_dict(cls, data: dict) -> "SkillTree":
        cats = {c: [Skill(**s) for s in skills] for c, skills in data.get("categories", {}).items()}
        return cls(categories=cats)

    @classmethod
    def load(cls, path: Path) -> "SkillTree":
        if not path.exists():
            return cls()
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def save(self, path: Path) -> None:
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        os.replace(tmp, path)


def tree_path(store: MemoryStore) -> Path:
    return store.layout.root / "skill_tree.json"


@dataclass(frozen=True)
class CurriculumWeights:
    w_b: float = 0.3
    w_d: float = 0.2
    w_u: float = 0.3
    w_i: float = 0.2

    def __post_init__(self) -> None:
        values = self.as_tuple()
        if any(w < 0 for w in values):
            raise ValueError("weights must be nonnegative")
        if abs(sum(values) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {sum(values)}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w_b, self.w_d, self.w_u, self.w_i)


@dataclass
class TaskCandidate:
    description: str
    target_category: str
    target_skill: str | None
    utility: float
    innovation: float
    breadth: float = 0.0
    depth: float = 0.0
    total: float = 0.0

    def __post_init__(self) -> None:
        for name in ("utility", "innovation", "breadth", "depth"):
            v = getattr(self, name)
            if not 0.0 <= v <= 10.0:
                raise ValueError(f"{name} must be in [0, 10], got {v}")

    def breakdown(self) -> dict[str, float]:
        return {"b": self.breadth, "d": self.depth, "u": self.utility, "i": self.innovation}


def breadth(category: str, tree: SkillTree) -> float:
    """10 * max(0, 1 - |S_c| / (mean + 1)): rewards below-average categories."""
    count = len(tree.categories.get(category, []))
    mean = tree.mean_count()
    return 10.0 * max(0.0, 1.0 - count / (mean + 1.0))


def depth(skill_name: str | None, tree: SkillTree) -> float:
    """10 * u / (u_max + 1); zero for a new skill."""
    if skill_name is None:
        return 0.0
    skill = tree.find(skill_name)
    usage = skill.usage_count if skill else 0
    return 10.0 * usage / (tree.max_usage() + 1)


def score(candidate: TaskCandidate, weights: CurriculumWeights) -> float:
    return (
        weights.w_b * candidate.breadth
        + weights.w_d * candidate.depth
        + weights.w_u * candidate.utility
        + weights.w_i * candidate.innovation
    )


# --- planning ------------------------------------------------------------------


PLANNING_PROMPT = (
    "You are planning autonomous exploration tasks. Current skill tree "
    "statistics:\n{stats}\n\n"
    "Propose 5-8 exploration task candidates as a JSON array of objects with "
    'keys "description", "category", "skill" (optional), "utility" (1-10), '
    '"innovation" (1-10). Span several distinct categories.{stricture}'
)


def _tree_stats(tree: SkillTree) -> str:
    if not tree.categories:
        return "(empty tree)"
    lines = []
    for cat, skills in sorted(tree.categories.items()):
        names = ", ".join(f"{s.name}(u={s.usage_count})" for s in skills) or "(empty)"
        lines.append(f"- {cat}: {names}")
    return "\n".join(lines)


def _parse_candidates(text: str, tree: SkillTree) -> list[TaskCandidate]:
    m = re.search(r"\[.*\]", text, re.DOTALL)
    if m is None:
        raise ValueError("no JSON array in planner reply")
    raw = json.loads(m.group(0))
    out = []
    for item in raw:
        out.append(
            TaskCandidate(
                description=item["description"],
                target_category=item["category"],
                target_skill=item.get("skill"),
                utility=float(item["utility"]),
                innovation=float(item["innovation"]),
                breadth=breadth(item["category"], tree),
                depth=depth(item.get("skill"), tree),
            )
        )
    return out


def tasks_path(store: MemoryStore) -> Path:
    return store.layout.root / "exploration" / "tasks.json"


def reports_dir(store: MemoryStore) -> Path:
    return store.layout.root / "exploration" / "reports"


def planning_log_path(store: MemoryStore) -> Path:
    return store.layout.root / "exploration" / "planning.log"


def pending_tasks(store: MemoryStore) -> list[dict]:
    path = tasks_path(store)
    if not path.exists():
        return []
    return [t for t in json.loads(path.read_text(encoding="utf-8")) if t.get("status") == "pending"]


def _write_tasks(store: MemoryStore, tasks: list[dict]) -> None:
    path = tasks_path(store)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(tasks, indent=2, sort_keys=True), encoding="utf-8")
    os.replace(tmp, path)


def plan(
    tree: SkillTree,
    weights: CurriculumWeights,
    backend: Backend,
    store: MemoryStore,
    *,
    min_categories: int = 4,
) -> list[TaskCandidate]:
    """Score model proposals, sort, persist the list, and yield control.

    The list must span at least `min_categories` distinct categories; one
    regeneration attempt, then a PlanningError lands in the planning log.
    """
    if pending_tasks(store):
        raise PlanningError("a pending task list already exists; execute it first")

    candidates: list[TaskCandidate] = []
    for attempt in range(2):
        stricture = "" if attempt == 0 else (
            f" Previous proposal spanned too few categories; cover at least {min_categories}."
        )
        request = ChatRequest(
            system_prompt="You plan skill-building exploration for an autonomous agent.",
            messages=(user(PLANNING_PROMPT.format(stats=_tree_stats(tree), stricture=stricture)),),
            tool_schemas=SchemaBlock(full=None, reminder="planning pass: no tools", schema_hash=""),
        )
        reply = backend.complete(request)
        candidates = _parse_candidates(reply.text, tree)
        for c in candidates:
            c.total = score(c, weights)
        spanned = {c.target_category for c in candidates}
        if len(spanned) >= min_categories:
            break
    else:
        message = f"planning rejected: candidates span {len(spanned)} categories, need {min_categories}"
        log = planning_log_path(store)
        log.parent.mkdir(parents=True, exist_ok=True)
        with log.open("a", encoding="utf-8") as fh:
            fh.write(message + "\n")
        raise PlanningError(message)

    candidates.sort(key=lambda c: (-c.total, c.description))
    _write_tasks(
        store,
        [
            {
                "description": c.description,
                "category": c.target_category,
                "skill": c.target_skill,
                "score": c.total,
                "breakdown": c.breakdown(),
                "status": "pending",
            }
            for c in candidates
        ],
    )
    return candidates


# --- execution + consolidation ------------------------------------------------


@dataclass
class ExplorationResult:
    report_path: str
    succeeded: bool
    skills_added: list[str]
    usage_bumped: list[str]
    aborted_for_violation: bool = False
    outcome: object | None = None


def execute_exploration_task(
    store: MemoryStore,
    task: dict,
    session_factory: Callable[..., object],
    *,
    now: Callable[[], float] = time.time,
) -> ExplorationResult:
    """Fixed sequence: context loading, skill search, sandboxed execution,
    report writing, atomic consolidation, task-list advancement.

    Failed experiments still produce reports; a sandbox-escape attempt aborts
    the run and produces a violation report. Consolidation (report archive +
    tree update + usage counters) happens under the store lock as one unit.
    """
    import tempfile

    tree = SkillTree.load(tree_path(store))

    # 1. context loading
    recent = sorted(reports_dir(store).glob("*.md"))[-5:] if reports_dir(store).exists() else []
    pending = pending_tasks(store)
    context_lines = [f"prior reports: {', '.join(p.name for p in recent) or 'none'}",
                     f"pending tasks: {len(pending)}"]

    # 2. skill search
    related = tree.categories.get(task["category"], [])
    skill_hints = ", ".join(s.name for s in related) or "none yet"
    prompt = (
        f"[exploration task] {task['description']}\n"
        f"Target category: {task['category']}; known skills there: {skill_hints}.\n"
        + "\n".join(context_lines)
        + "\nWork inside the current directory only. Conclude with a findings "
        "summary; declare new skills with "
        '<skill category="..." name="..." scripts="..."/> and usage with '
        '<usage skill="..." delta="1"/>.'
    )

    # 3. execution, confined to a temporary directory
    with tempfile.TemporaryDirectory(prefix="explore-") as sandbox:
        outcome = session_factory(prompt, workspace=sandbox, strict_sandbox=True)

    reason = getattr(outcome, "reason", None)
    reason_value = getattr(reason, "value", str(reason))
    final_text = getattr(outcome, "final_text", "")
    violated = reason_value == "fatal_error" and "sandbox violation" in final_text
    succeeded = reason_value == "completed"

    # 4. report writing (failed experiments are documented too)
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime(now()))
    slug = re.sub(r"[^a-z0-9]+", "-", task["description"].lower())[:40].strip("-")
    status_word = "violation" if violated else ("success" if succeeded else "failure")
    report_text = (
        f"# exploration report: {task['description']}\n\n"
        f"- category: {task['category']}\n"
        f"- outcome: {status_word} ({reason_value})\n"
        f"- session: {getattr(outcome, 'session_id', '?')}\n\n"
        f"## findings\n\n{final_text or '(none)'}\n"
    )

    skills_added: list[str] = []
    usage_bumped: list[str] = []
    report_path = reports_dir(store) / f"{stamp}_{slug or 'task'}.md"
    report_path.parent.mkdir(parents=True, exist_ok=True)

    # 5+6. atomic consolidation and task-list advancement
    def consolidate() -> None:
        report_path.write_text(report_text, encoding="utf-8")
        if succeeded:
            timestamp = now()
            for category, name, scripts in SKILL_TAG_RE.findall(final_text):
                if tree.find(name) is None:
                    tree.add_skill(
                        category or task["category"],
                        Skill(
                            name=name,
                            scripts=[s for s in scripts.split(";") if s],
                            created_at=timestamp,
                            predicted_score=task.get("score"),
                            score_breakdown=task.get("breakdown"),
                        ),
                    )
                    skills_added.append(name)
            for name, delta in USAGE_TAG_RE.findall(final_text):
                tree.bump_usage(name, int(delta), timestamp)
                usage_bumped.append(name)
            tree.save(tree_path(store))
        _advance_task(store, task, status_word)

    try:
        with store.locked():
            consolidate()
    except Exception:
        # lock trouble: one retry, then report-only
        try:
            with store.locked(timeout_s=1.0):
                consolidate()
        except Exception:
            report_path.write_text(report_text, encoding="utf-8")
            _advance_task(store, task, status_word)

    return ExplorationResult(
        report_path=str(report_path),
        succeeded=succeeded,
        skills_added=skills_added,
        usage_bumped=usage_bumped,
        aborted_for_violation=violated,
        outcome=outcome,
    )


def _advance_task(store: MemoryStore, task: dict, status: str) -> None:
    path = tasks_path(store)
    if not path.exists():
        return
    tasks = json.loads(path.read_text(encoding="utf-8"))
    for t in tasks:
        if t.get("description") == task.get("description") and t.get("status") == "pending":
            t["status"] = status
            break
    _write_tasks(store, tasks)


# --- reflection-based weight adaptation ------------------------------------------


@dataclass(frozen=True)
class CompletedTask:
    predicted_score: float
    score_breakdown: dict[str, float] | None
    usage_within_30d: int
    completed_at: float


_DIM_ORDER = ("b", "d", "u", "i")


def _dominant_dimension(weights: tuple[float, float, float, float], breakdown: dict[str, float]) -> int:
    """Argmax of weighted contribution; ties break in fixed order b>d>u>i."""
    contributions = [weights[i] * breakdown.get(dim, 0.0) for i, dim in enumerate(_DIM_ORDER)]
    best = max(contributions)
    return contributions.index(best)


def adapt_weights(
    weights: CurriculumWeights,
    completed: Sequence[CompletedTask],
    now: float,
    *,
    log: Callable[[str], None] | None = None,
) -> CurriculumWeights:
    """Reflection rule, applied sequentially per task, then renormalized.

    Overrated (S > 8 but usage < 3 within 30 days): dominant dimension's
    weight * 0.9. Underrated (S < 5 but usage > 5): * 1.1. Tasks without a
    score breakdown are skipped with a note.
    """
    w = list(weights.as_tuple())
    for task in completed:
        if task.score_breakdown is None:
            if log:
                log("skipping task without score breakdown")
            continue
        factor = None
        if task.predicted_score > 8.0 and task.usage_within_30d < 3:
            factor = 0.9
        elif task.predicted_score < 5.0 and task.usage_within_30d > 5:
            factor = 1.1
        if factor is None:
            continue
        idx = _dominant_dimension(tuple(w), task.score_breakdown)
        w[idx] *= factor
    total = sum(w)
    if total <= 0:
        return weights
    normalized = tuple(x / total for x in w)
    return CurriculumWeights(*normalized)


# --- triggers ----------------------------------------------------------------------


def mailbox_dirs(store: MemoryStore) -> tuple[Path, Path, Path]:
    base = store.layout.root / "mailbox"
    return base / "inbox", base / "claimed", base / "results"


def claim_task(store: MemoryStore) -> tuple[str, str] | None:
    """Claim one mailbox task by rename: exactly-once pickup across pollers.
    Returns (task id, contents)."""
    inbox, claimed, _ = mailbox_dirs(store)
    if not inbox.exists():
        return None
    claimed.mkdir(parents=True, exist_ok=True)
    for candidate in sorted(inbox.iterdir()):
        if not candidate.is_file():
            continue
        target = claimed / (candidate.name + ".claimed")
        try:
            text = candidate.read_text(encoding="utf-8")
            os.rename(candidate, target)
        except FileNotFoundError:
            continue  # another poller claimed it first
        if text.strip():
            return candidate.name, text.strip()
    return None


def write_task_result(store: MemoryStore, task_id: str, outcome: dict) -> Path:
    _, _, results = mailbox_dirs(store)
    results.mkdir(parents=True, exist_ok=True)
    path = results / f"{task_id}.json"
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(outcome, indent=2, sort_keys=True), encoding="utf-8")
    os.replace(tmp, path)
    return path


def poll_trigger(
    mode: str,
    store: MemoryStore,
    *,
    callback: Callable[[], str] | None = None,
) -> str | None:
    """Task mode: claim one mailbox file by rename (exactly-once pickup).
    Reflect mode: invoke the registered callback; empty string means no work.
    """
    if mode == "task":
        claimed = claim_task(store)
        return claimed[1] if claimed else None
    if mode == "reflect":
        if callback is None:
            return None
        text = callback()
        return text.strip() or None
    raise ValueError(f"unknown trigger mode {mode!r}")


def log_self_improvement(store: MemoryStore, kind: str, text: str) -> None:
    """Errors-with-corrections, user preferences, verified success patterns.
    The newest entries ride along in every system prompt via load_always_on."""
    store.append_self_improvement(kind, text)
