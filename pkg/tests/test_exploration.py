from __future__ import annotations

import json
import math
from dataclasses import dataclass

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leanagent.exploration import (
    CompletedTask,
    CurriculumWeights,
    ExplorationResult,
    PlanningError,
    Skill,
    SkillTree,
    TaskCandidate,
    UsageMonotonicityError,
    adapt_weights,
    breadth,
    depth,
    execute_exploration_task,
    log_self_improvement,
    mailbox_dirs,
    pending_tasks,
    plan,
    poll_trigger,
    reports_dir,
    score,
    tasks_path,
    tree_path,
)
from leanagent.gateway import ModelReply, ScriptStep, ScriptedBackend


def _tree(counts: dict[str, list[int]]) -> SkillTree:
    """counts: category -> list of usage counts (one skill per count)."""
    tree = SkillTree()
    for cat, usages in counts.items():
        tree.add_category(cat)
        for i, u in enumerate(usages):
            tree.add_skill(cat, Skill(name=f"{cat}-{i}", usage_count=u))
    return tree


# --- curriculum math: hand cases -------------------------------------------------


def test_breadth_empty_category_mean_three():
    tree = _tree({"a": [0, 0, 0], "b": [0, 0, 0], "c": [0, 0, 0], "target": []})
    # mean over {3,3,3,0} = 2.25... construct exact mean 3 instead:
    tree = _tree({"a": [0, 0, 0], "b": [0, 0, 0], "c": [0, 0, 0]})
    tree.add_category("target")
    # mean over {3,3,3,0} = 9/4; need S̄=3 exactly: use three categories of 3 and query a NEW category
    tree = _tree({"a": [0, 0, 0], "b": [0, 0, 0], "c": [0, 0, 0]})
    assert tree.mean_count() == 3.0
    assert breadth("brand-new", tree) == 10.0  # |S_c| = 0, S̄ = 3 -> 10 * (1 - 0/4)


def test_breadth_clamps_at_zero():
    tree = _tree({"a": [0, 0, 0, 0], "b": [0, 0], "c": [0, 0, 0]})
    assert tree.mean_count() == 3.0
    assert breadth("a", tree) == 0.0  # 10 * max(0, 1 - 4/4)


def test_breadth_fractional_case():
    tree = _tree({"a": [0, 0], "b": [0, 0]})
    assert tree.mean_count() == 2.0
    assert math.isclose(breadth("a", tree), 10.0 * (1.0 - 2.0 / 3.0), rel_tol=1e-12)
    assert math.isclose(breadth("a", tree), 3.3333333333333335, rel_tol=1e-12)


def test_depth_zero_usage():
    tree = _tree({"a": [7, 3]})
    tree.add_skill("a", Skill(name="fresh", usage_count=0))
    assert depth("fresh", tree) == 0.0
    assert depth(None, tree) == 0.0  # new skill


def test_depth_worked_case():
    tree = _tree({"a": [4, 1]})
    assert depth("a-0", tree) == 8.0  # 10 * 4 / (4 + 1)


def test_depth_degenerate_empty_tree():
    assert depth("anything", SkillTree()) == 0.0


def test_score_worked_case():
    candidate = TaskCandidate(
        description="d", target_category="c", target_skill=None,
        utility=10.0, innovation=0.0, breadth=10.0, depth=0.0,
    )
    assert score(candidate, CurriculumWeights()) == 6.0


def test_score_all_zero_and_all_ten():
    zero = TaskCandidate("d", "c", None, 0.0, 0.0, 0.0, 0.0)
    ten = TaskCandidate("d", "c", None, 10.0, 10.0, 10.0, 10.0)
    assert score(zero, CurriculumWeights()) == 0.0
    w = CurriculumWeights(0.25, 0.25, 0.25, 0.25)
    assert math.isclose(score(ten, w), 10.0, rel_tol=1e-12)


# --- brute-force oracle over random trees -------------------------------------------


def _brute_breadth(category, raw):
    counts = [len(v) for v in raw.values()]
    mean = sum(counts) / len(counts) if counts else 0.0
    sc = len(raw.get(category, []))
    return 10.0 * max(0.0, 1.0 - sc / (mean + 1.0))


def _brute_depth(skill_name, raw):
    usages = [u for v in raw.values() for u in v]
    u_max = max(usages, default=0)
    u = 0
    for cat, v in raw.items():
        for i, usage in enumerate(v):
            if f"{cat}-{i}" == skill_name:
                u = usage
    return 10.0 * u / (u_max + 1)


_raw_trees = st.dictionaries(
    st.sampled_from(["alpha", "beta", "gamma", "delta", "epsilon"]),
    st.lists(st.integers(0, 50), max_size=6),
    min_size=1,
    max_size=5,
)


@settings(max_examples=200, deadline=None)
@given(raw=_raw_trees, category=st.sampled_from(["alpha", "beta", "zeta"]), skill_idx=st.integers(0, 5))
def test_breadth_depth_match_brute_force(raw, category, skill_idx):
    tree = _tree(raw)
    assert abs(breadth(category, tree) - _brute_breadth(category, raw)) < 1e-12
    cat = next(iter(raw))
    name = f"{cat}-{skill_idx}"
    assert abs(depth(name, tree) - _brute_depth(name, raw)) < 1e-12


# --- weights ----------------------------------------------------------------------------


def test_weights_must_normalize():
    with pytest.raises(ValueError):
        CurriculumWeights(0.5, 0.5, 0.5, 0.5)
    with pytest.raises(ValueError):
        CurriculumWeights(-0.1, 0.5, 0.3, 0.3)


def test_adapt_weights_worked_example():
    task = CompletedTask(
        predicted_score=8.5,
        score_breakdown={"b": 9.0, "d": 1.0, "u": 5.0, "i": 2.0},  # breadth-dominant
        usage_within_30d=1,
        completed_at=0.0,
    )
    out = adapt_weights(CurriculumWeights(), [task], now=30 * 86_400.0)
    expected = (0.27 / 0.97, 0.2 / 0.97, 0.3 / 0.97, 0.2 / 0.97)
    for got, want in zip(out.as_tuple(), expected):
        assert abs(got - want) < 1e-5
    assert abs(out.w_b - 0.27835) < 1e-5
    assert abs(out.w_d - 0.20619) < 1e-5


def test_adapt_weights_no_qualifying_tasks():
    tasks = [
        CompletedTask(7.0, {"b": 5, "d": 5, "u": 5, "i": 5}, 4, 0.0),
        CompletedTask(6.0, {"b": 5, "d": 5, "u": 5, "i": 5}, 10, 0.0),
    ]
    out = adapt_weights(CurriculumWeights(), tasks, now=0.0)
    assert out == CurriculumWeights()


def test_adapt_weights_down_then_up_nets_099():
    down = CompletedTask(9.0, {"b": 10, "d": 0, "u": 0, "i": 0}, 0, 0.0)
    up = CompletedTask(4.0, {"b": 10, "d": 0, "u": 0, "i": 0}, 9, 0.0)
    out = adapt_weights(CurriculumWeights(), [down, up], now=0.0)
    # sequential application oracle: w_b * 0.9 * 1.1 = 0.297 pre-norm
    pre = (0.297, 0.2, 0.3, 0.2)
    total = sum(pre)
    for got, want in zip(out.as_tuple(), pre):
        assert abs(got - want / total) < 1e-12


def test_adapt_weights_skips_tasks_without_breakdown():
    notes = []
    task = CompletedTask(9.0, None, 0, 0.0)
    out = adapt_weights(CurriculumWeights(), [task], now=0.0, log=notes.append)
    assert out == CurriculumWeights()
    assert notes and "breakdown" in notes[0]


_random_tasks = st.lists(
    st.builds(
        CompletedTask,
        predicted_score=st.floats(0, 10),
        score_breakdown=st.one_of(
            st.none(),
            st.fixed_dictionaries({d: st.floats(0, 10) for d in ("b", "d", "u", "i")}),
        ),
        usage_within_30d=st.integers(0, 20),
        completed_at=st.floats(0, 1e9),
    ),
    max_size=12,
)


@settings(max_examples=300, deadline=None)
@given(tasks=_random_tasks)
def test_weight_simplex_closure(tasks):
    out = adapt_weights(CurriculumWeights(), tasks, now=0.0)
    values = out.as_tuple()
    assert abs(sum(values) - 1.0) <= 1e-9
    assert all(w >= 0 for w in values)


def test_ranking_invariant_under_weight_rescaling():
    # scaling all weights before normalization keeps the argmax of S
    candidates = [
        TaskCandidate(f"t{i}", "c", None, u, i_, b, d)
        for i, (b, d, u, i_) in enumerate([(9, 1, 4, 2), (2, 8, 7, 1), (5, 5, 5, 5), (1, 2, 9, 9)])
    ]
    base = CurriculumWeights()
    for factor in (2.0, 5.0, 0.5):
        scaled = tuple(w * factor for w in base.as_tuple())
        total = sum(scaled)
        rescaled = CurriculumWeights(*(w / total for w in scaled))
        rank_base = max(candidates, key=lambda c: score(c, base)).description
        rank_scaled = max(candidates, key=lambda c: score(c, rescaled)).description
        assert rank_base == rank_scaled


# --- skill tree persistence --------------------------------------------------------------


def test_tree_round_trip(tmp_path):
    tree = _tree({"web": [3, 1], "data": [0]})
    path = tmp_path / "skill_tree.json"
    tree.save(path)
    back = SkillTree.load(path)
    assert back.to_dict() == tree.to_dict()


def test_usage_counter_monotone():
    tree = _tree({"a": [2]})
    tree.bump_usage("a-0", 3, now=1.0)
    assert tree.find("a-0").usage_count == 5
    with pytest.raises(UsageMonotonicityError):
        tree.bump_usage("a-0", -1, now=2.0)
    assert tree.find("a-0").usage_count == 5


def test_duplicate_skill_in_category_rejected():
    tree = _tree({"a": [0]})
    with pytest.raises(ValueError):
        tree.add_skill("a", Skill(name="a-0"))


# --- planning ---------------------------------------------------------------------------


def _planner_reply(candidates):
    return ScriptStep(reply=ModelReply(text=json.dumps(candidates)))


def _candidates(categories):
    return [
        {"description": f"explore {c} task {i}", "category": c, "utility": 5 + i % 3, "innovation": 4}
        for i, c in enumerate(categories)
    ]


def test_plan_sorts_and_persists(store):
    tree = _tree({"web": [1], "data": [2, 3]})
    raw = _candidates(["web", "data", "files", "media", "ops", "web"])
    backend = ScriptedBackend([_planner_reply(raw)])
    out = plan(tree, CurriculumWeights(), backend, store)
    totals = [c.total for c in out]
    assert totals == sorted(totals, reverse=True)
    saved = json.loads(tasks_path(store).read_text())
    assert len(saved) == 6
    assert all(t["status"] == "pending" for t in saved)
    # no execution happened: the planner yields
    assert not reports_dir(store).exists() or not list(reports_dir(store).glob("*.md"))


def test_plan_tie_break_lexicographic(store):
    tree = SkillTree()
    raw = [
        {"description": "bravo task", "category": "c1", "utility": 5, "innovation": 5},
        {"description": "alpha task", "category": "c2", "utility": 5, "innovation": 5},
        {"description": "delta task", "category": "c3", "utility": 5, "innovation": 5},
        {"description": "charlie task", "category": "c4", "utility": 5, "innovation": 5},
    ]
    backend = ScriptedBackend([_planner_reply(raw)])
    out = plan(tree, CurriculumWeights(), backend, store)
    assert [c.description for c in out] == ["alpha task", "bravo task", "charlie task", "delta task"]


def test_plan_under_four_categories_retries_then_errors(store):
    tree = SkillTree()
    narrow = _candidates(["web", "web", "data"])
    backend = ScriptedBackend([_planner_reply(narrow), _planner_reply(narrow)])
    with pytest.raises(PlanningError):
        plan(tree, CurriculumWeights(), backend, store)
    assert "planning rejected" in (store.layout.root / "exploration" / "planning.log").read_text()


def test_plan_retry_can_succeed(store):
    tree = SkillTree()
    narrow = _candidates(["web", "web", "data"])
    wide = _candidates(["web", "data", "files", "ops"])
    backend = ScriptedBackend([_planner_reply(narrow), _planner_reply(wide)])
    out = plan(tree, CurriculumWeights(), backend, store)
    assert len({c.target_category for c in out}) >= 4


def test_plan_refuses_with_pending_list(store):
    tree = SkillTree()
    wide = _candidates(["a", "b", "c", "d"])
    backend = ScriptedBackend([_planner_reply(wide)])
    plan(tree, CurriculumWeights(), backend, store)
    with pytest.raises(PlanningError):
        plan(tree, CurriculumWeights(), ScriptedBackend([]), store)


# --- execution + consolidation ----------------------------------------------------------


@dataclass
class FakeOutcome:
    reason: str
    final_text: str
    session_id: str = "fake-1"


def _task(description="explore parsing task", category="data"):
    return {
        "description": description,
        "category": category,
        "skill": None,
        "score": 6.0,
        "breakdown": {"b": 10, "d": 0, "u": 10, "i": 0},
        "status": "pending",
    }


def _seed_tasks(store, task):
    path = tasks_path(store)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([task]))


def test_execute_success_adds_skill_and_report(store):
    task = _task()
    _seed_tasks(store, task)

    def factory(prompt, workspace, strict_sandbox=True):
        assert "explore parsing task" in prompt
        return FakeOutcome(
            reason="completed",
            final_text='found a way. <skill category="data" name="csv-batcher" scripts="batch.py"/>'
            '<usage skill="csv-batcher" delta="1"/>',
        )

    result = execute_exploration_task(store, task, factory, now=lambda: 1_700_000_000.0)
    assert result.succeeded
    assert result.skills_added == ["csv-batcher"]
    tree = SkillTree.load(tree_path(store))
    skill = tree.find("csv-batcher")
    assert skill is not None and skill.usage_count == 1
    assert skill.scripts == ["batch.py"]
    report = (store.layout.root / "exploration" / "reports")
    files = list(report.glob("*.md"))
    assert len(files) == 1
    assert "success" in files[0].read_text()
    assert pending_tasks(store) == []


def test_execute_failure_still_documents(store):
    task = _task("failing experiment", "ops")
    _seed_tasks(store, task)
    factory = lambda prompt, workspace, strict_sandbox=True: FakeOutcome("round_cap", "ran out of rounds")
    result = execute_exploration_task(store, task, factory)
    assert not result.succeeded
    files = list(reports_dir(store).glob("*.md"))
    assert len(files) == 1
    text = files[0].read_text()
    assert "failure" in text and "ran out of rounds" in text
    assert SkillTree.load(tree_path(store)).all_skills() == []
    assert pending_tasks(store) == []  # task list still advanced


def test_execute_sandbox_violation_aborts_with_violation_report(store):
    task = _task("escape attempt", "ops")
    _seed_tasks(store, task)
    factory = lambda prompt, workspace, strict_sandbox=True: FakeOutcome(
        "fatal_error", "sandbox violation: write to '/etc/passwd' is outside allowed roots"
    )
    result = execute_exploration_task(store, task, factory)
    assert result.aborted_for_violation
    files = list(reports_dir(store).glob("*.md"))
    assert "violation" in files[0].read_text()
    assert SkillTree.load(tree_path(store)).all_skills() == []


def test_execute_runs_in_confined_tempdir(store, tmp_path):
    task = _task()
    _seed_tasks(store, task)
    seen = {}

    def factory(prompt, workspace, strict_sandbox=True):
        seen["workspace"] = workspace
        seen["strict"] = strict_sandbox
        return FakeOutcome("completed", "ok")

    execute_exploration_task(store, task, factory)
    assert seen["strict"] is True
    assert "explore-" in seen["workspace"]


def test_usage_stays_monotone_under_lock_faults(tmp_path):
    """Lock-timeout interleavings degrade to report-only; counters never drop."""
    import fcntl
    import os as _os

    from leanagent.memory import MemoryStore

    store = MemoryStore(tmp_path / "mem", lock_timeout_s=0.2)
    tree = _tree({"data": [5]})
    tree.save(tree_path(store))
    task = _task("bump the counter", "data")
    final = 'ok <usage skill="data-0" delta="1"/>'
    factory = lambda prompt, workspace, strict_sandbox=True: FakeOutcome("completed", final)

    # hold the lock externally: consolidation falls back to report-only
    fd = _os.open(store.layout.lock_path, _os.O_CREAT | _os.O_RDWR)
    fcntl.flock(fd, fcntl.LOCK_EX)
    try:
        _seed_tasks(store, task)
        execute_exploration_task(store, task, factory)
    finally:
        _os.close(fd)
    assert SkillTree.load(tree_path(store)).find("data-0").usage_count == 5  # unchanged, not decreased

    _seed_tasks(store, task)
    execute_exploration_task(store, task, factory)
    assert SkillTree.load(tree_path(store)).find("data-0").usage_count == 6


# --- triggers ---------------------------------------------------------------------------


def test_poll_trigger_mailbox_claim_by_rename(store):
    inbox, claimed, _ = mailbox_dirs(store)
    inbox.mkdir(parents=True)
    (inbox / "0001-task.txt").write_text("investigate the flaky export")
    got = poll_trigger("task", store)
    assert got == "investigate the flaky export"
    assert not (inbox / "0001-task.txt").exists()
    assert (claimed / "0001-task.txt.claimed").exists()
    assert poll_trigger("task", store) is None  # exactly once


def test_poll_trigger_empty_mailbox(store):
    assert poll_trigger("task", store) is None


def test_poll_trigger_reflect_empty_string_means_no_session(store):
    assert poll_trigger("reflect", store, callback=lambda: "") is None
    assert poll_trigger("reflect", store, callback=lambda: "check the logs") == "check the logs"


# --- self-improvement wrapper -----------------------------------------------------------


def test_log_self_improvement_kinds(store):
    log_self_improvement(store, "error_correction", "use absolute paths in cron")
    assert "[error_correction]" in store.load_always_on()
    with pytest.raises(ValueError):
        log_self_improvement(store, "error_correction", "")
    with pytest.raises(ValueError):
        log_self_improvement(store, "bogus_kind", "text")
