"""The single user/automation surface.

Commands: run, spawn, reflect, watch, schedule, memory, explore. Subagents
are ordinary child processes of this same CLI; daemons are pollers that
spawn one child per fired trigger. Exit codes are a stable contract:
0 completed, 2 usage error, 3 round cap, 4 escalated to user, 5 fatal.
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

from .config import RuntimeConfig
from .gateway import make_backend
from .kernel import TerminalReason, run_session
from .memory import MemoryStore
from . import evolution, exploration

EXIT_BY_REASON = {
    TerminalReason.COMPLETED: 0,
    TerminalReason.ROUND_CAP: 3,
    TerminalReason.ESCALATED_TO_USER: 4,
    TerminalReason.FATAL_ERROR: 5,
    TerminalReason.USER_ABORT: 1,
}

EXIT_USAGE = 2


def _build_config(args) -> RuntimeConfig:
    cfg = RuntimeConfig.load(args.config)
    if args.memory_root:
        cfg.memory_root = args.memory_root
    if args.backend:
        cfg.backend = args.backend
    if args.max_rounds is not None:
        cfg.round_cap = args.max_rounds
    return cfg


def _store_for(cfg: RuntimeConfig) -> MemoryStore:
    return MemoryStore(
        cfg.memory_root,
        always_on_cap=cfg.always_on_cap,
        hint_cap=cfg.hint_cap,
        self_improvement_visible=cfg.self_improvement_visible,
    )


def cmd_run(args) -> int:
    if not args.task.strip():
        print("error: task must be non-empty", file=sys.stderr)
        return EXIT_USAGE
    cfg = _build_config(args)
    store = _store_for(cfg)
    try:
        backend = make_backend(cfg.backend)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    workspace = Path(args.workspace or ".").resolve()
    workspace.mkdir(parents=True, exist_ok=True)
    session_id = args.session_id or uuid.uuid4().hex[:12]

    decision = evolution.classify_stage(args.task, store)
    task = args.task if not decision.attachments else f"{args.task}\n\n{decision.attachments}"

    browser = None
    if cfg.browser_enabled:
        from .browser import BrowserHost, CdpError

        try:
            browser = BrowserHost.launch(
                cfg.thresholds,
                binary=cfg.browser_binary,
                headless=cfg.browser_headless,
                navigation_timeout_s=cfg.navigation_timeout_s,
            )
        except CdpError as exc:
            print(f"error: browser launch failed: {exc}", file=sys.stderr)
            return 5

    try:
        outcome = run_session(
            task,
            args.mode,
            cfg,
            backend=backend,
            store=store,
            workspace_dir=workspace,
            session_id=session_id,
            round_cap=cfg.round_cap,
            browser=browser,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        if browser is not None:
            browser.close()

    if cfg.evolution_auto:
        evolution.run_post_session(
            store,
            backend,
            task=args.task,
            session_id=outcome.session_id,
            transcript=store.read_archive(outcome.session_id),
            outcome_reason=outcome.reason.value,
            turns=outcome.turns,
            chars=outcome.chars_sent,
            stage=decision.stage,
            sop_key=decision.sop_key,
            min_runs_to_codify=cfg.codify_after_runs,
        )

    if args.mode == "reflect":
        # reflect sessions answer to the workspace, not a terminal
        (workspace / "outcome.txt").write_text(outcome.final_text, encoding="utf-8")
    if args.json:
        print(json.dumps(outcome.to_dict(), ensure_ascii=False))
    elif args.mode != "reflect":
        print(outcome.final_text)
    return EXIT_BY_REASON[outcome.reason]


def _child_argv(task: str, args, workspace: Path, session_id: str) -> list[str]:
    argv = [sys.executable, "-m", "leanagent", "run", task, "--json",
            "--workspace", str(workspace), "--session-id", session_id]
    if args.config:
        argv += ["--config", args.config]
    if args.memory_root:
        argv += ["--memory-root", args.memory_root]
    if args.backend:
        argv += ["--backend", args.backend]
    if args.max_rounds is not None:
        argv += ["--max-rounds", str(args.max_rounds)]
    return argv


def cmd_spawn(args) -> int:
    """One child CLI process per subtask: isolated session state, shared store."""
    if not args.subtasks:
        print(json.dumps([]))
        return 0
    parent_workspace = Path(args.workspace or ".").resolve()

    def run_child(index_task: tuple[int, str]) -> dict:
        index, task = index_task
        session_id = f"{uuid.uuid4().hex[:8]}-{index}"
        workspace = parent_workspace / f"sub-{session_id}"
        workspace.mkdir(parents=True, exist_ok=True)
        proc = subprocess.run(
            _child_argv(task, args, workspace, session_id),
            capture_output=True,
            text=True,
        )
        slot: dict = {"index": index, "task": task, "exit_code": proc.returncode}
        try:
            slot["outcome"] = json.loads(proc.stdout.strip().splitlines()[-1])
        except (json.JSONDecodeError, IndexError):
            slot["error"] = (proc.stderr or proc.stdout).strip()[-500:]
        return slot

    with ThreadPoolExecutor(max_workers=max(1, args.parallelism)) as pool:
        slots = list(pool.map(run_child, enumerate(args.subtasks)))
    slots.sort(key=lambda s: s["index"])
    print(json.dumps(slots, ensure_ascii=False))
    return 0


def reflect_daemon(
    trigger: Callable[[], str],
    interval_s: float,
    dispatch: Callable[[str], None],
    *,
    clock: Callable[[], float] = time.monotonic,
    sleep: Callable[[float], None] = time.sleep,
    max_polls: int | None = None,
) -> int:
    """Poll the trigger every interval; non-empty output becomes a task.

    Trigger crashes are logged and the daemon continues. Returns the number
    of dispatches (useful under an injected clock).
    """
    fired = 0
    polls = 0
    next_due = clock() + interval_s
    while max_polls is None or polls < max_polls:
        now = clock()
        if now < next_due:
            sleep(min(interval_s, next_due - now))
            continue
        next_due += interval_s
        polls += 1
        try:
            text = trigger()
        except Exception as exc:
            print(f"trigger failed (continuing): {exc}", file=sys.stderr)
            continue
        if text.strip():
            dispatch(text.strip())
            fired += 1
    return fired


def script_trigger(script_path: str | Path) -> Callable[[], str]:
    """Re-executes the script from disk each poll, so edits apply without
    restarting the daemon."""

    def trigger() -> str:
        proc = subprocess.run(
            [sys.executable, str(script_path)], capture_output=True, text=True, timeout=60
        )
        if proc.returncode != 0:
            raise RuntimeError(f"trigger script exited {proc.returncode}: {proc.stderr.strip()[:200]}")
        return proc.stdout

    return trigger


def _dispatch_child(args) -> Callable[[str], None]:
    def dispatch(task: str) -> None:
        workspace = Path(args.workspace or ".").resolve() / f"reflect-{uuid.uuid4().hex[:8]}"
        workspace.mkdir(parents=True, exist_ok=True)
        argv = [sys.executable, "-m", "leanagent", "run", task, "--mode", "reflect", "--json",
                "--workspace", str(workspace)]
        if args.config:
            argv += ["--config", args.config]
        if args.memory_root:
            argv += ["--memory-root", args.memory_root]
        if args.backend:
            argv += ["--backend", args.backend]
        subprocess.run(argv, capture_output=True, text=True)

    return dispatch


def cmd_reflect(args) -> int:
    if not Path(args.trigger).is_file():
        print(f"error: trigger script not found: {args.trigger}", file=sys.stderr)
        return EXIT_USAGE
    reflect_daemon(
        script_trigger(args.trigger),
        args.interval,
        _dispatch_child(args),
        max_polls=args.max_polls,
    )
    return 0


WATCH_TRIGGER_TEMPLATE = '''\
import json, os
from pathlib import Path

watch_dir = Path({watch_dir!r})
state_file = Path({state_file!r})
seen = set(json.loads(state_file.read_text())) if state_file.exists() else None
current = sorted(str(p) for p in watch_dir.iterdir() if p.is_file()) if watch_dir.exists() else []
state_file.write_text(json.dumps(current))
if seen is None:
    raise SystemExit(0)  # first poll records the baseline silently
new = [p for p in current if p not in seen]
if new:
    print("files created: " + ", ".join(new))
'''

SCHEDULE_TRIGGER_TEMPLATE = '''\
print({prompt!r})
'''


def _write_trigger(cfg: RuntimeConfig, name: str, body: str) -> Path:
    trigger_dir = Path(cfg.memory_root) / "triggers"
    trigger_dir.mkdir(parents=True, exist_ok=True)
    path = trigger_dir / name
    path.write_text(body, encoding="utf-8")
    return path


def cmd_watch(args) -> int:
    """Watchdog = reflect daemon over a generated file-change trigger script."""
    cfg = _build_config(args)
    _store_for(cfg)  # materializes the memory root
    state_file = Path(cfg.memory_root) / "triggers" / f"watch_state_{uuid.uuid4().hex[:8]}.json"
    script = _write_trigger(
        cfg,
        f"watch_{uuid.uuid4().hex[:8]}.py",
        WATCH_TRIGGER_TEMPLATE.format(watch_dir=str(Path(args.dir).resolve()), state_file=str(state_file)),
    )
    trigger = script_trigger(script)
    trigger()  # baseline scan: existing files never fire
    reflect_daemon(trigger, args.interval, _dispatch_child(args), max_polls=args.max_polls)
    return 0


def cmd_schedule(args) -> int:
    """Scheduled task = reflect daemon over a fixed-prompt trigger script."""
    cfg = _build_config(args)
    _store_for(cfg)
    script = _write_trigger(
        cfg,
        f"schedule_{uuid.uuid4().hex[:8]}.py",
        SCHEDULE_TRIGGER_TEMPLATE.format(prompt=args.prompt),
    )
    reflect_daemon(script_trigger(script), args.every, _dispatch_child(args), max_polls=args.max_polls)
    return 0


def cmd_memory(args) -> int:
    cfg = _build_config(args)
    store = _store_for(cfg)
    if args.subcommand == "fsck":
        report = store.fsck()
        if report.clean:
            print(f"0 dangling ({len(report.orphans)} unindexed files)")
            return 0
        for entry in report.dangling:
            print(f"dangling: [{entry.kind}] {entry.key} → {entry.pointer}")
        return 1
    if args.subcommand == "show-l1":
        sys.stdout.write(store.load_always_on())
        sys.stdout.write("\n")
        return 0
    if args.subcommand == "archive-ls":
        for name in store.list_archives():
            print(name)
        return 0
    print(f"error: unknown memory subcommand {args.subcommand}", file=sys.stderr)
    return EXIT_USAGE


def cmd_explore(args) -> int:
    """One poll/plan/execute step of the exploration cycle."""
    cfg = _build_config(args)
    store = _store_for(cfg)
    backend = make_backend(cfg.backend)
    tree = exploration.SkillTree.load(exploration.tree_path(store))

    claimed = exploration.claim_task(store)
    if claimed:
        task_id, text = claimed
        pending = [{"description": text, "category": args.category, "skill": None,
                    "score": None, "breakdown": None, "status": "pending"}]
    else:
        task_id = None
        pending = exploration.pending_tasks(store)
        if not pending:
            try:
                exploration.plan(tree, exploration.CurriculumWeights(), backend, store)
            except exploration.PlanningError as exc:
                print(f"planning error: {exc}", file=sys.stderr)
                return 5
            print("planned task list; execution resumes on the next invocation")
            return 0

    task = pending[0]

    def session_factory(prompt: str, workspace: str, strict_sandbox: bool = True):
        return run_session(
            prompt,
            "reflect",
            cfg,
            backend=backend,
            store=store,
            workspace_dir=workspace,
            strict_sandbox=strict_sandbox,
        )

    result = exploration.execute_exploration_task(store, task, session_factory)
    if task_id is not None and result.outcome is not None:
        exploration.write_task_result(store, task_id, result.outcome.to_dict())
    print(json.dumps({
        "report": result.report_path,
        "succeeded": result.succeeded,
        "skills_added": result.skills_added,
        "aborted_for_violation": result.aborted_for_violation,
    }))
    return 0 if result.succeeded else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="config file path")
    common.add_argument("--memory-root", default=None, help="memory store root directory")
    common.add_argument("--backend", default=None, help="backend spec: scripted:<path> or http(s) URL")
    common.add_argument("--json", action="store_true", help="emit structured outcomes")
    common.add_argument("--max-rounds", type=int, default=None, help="override the round cap")

    parser = argparse.ArgumentParser(prog="leanagent", description="Self-hosted agent runtime CLI")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one interact-mode session", parents=[common])
    p_run.add_argument("task")
    p_run.add_argument("--mode", choices=["interact", "reflect"], default="interact")
    p_run.add_argument("--workspace", default=None)
    p_run.add_argument("--session-id", default=None)
    p_run.set_defaults(func=cmd_run)

    p_spawn = sub.add_parser("spawn", help="run subtasks as parallel child processes", parents=[common])
    p_spawn.add_argument("subtasks", nargs="*")
    p_spawn.add_argument("--parallelism", type=int, default=4)
    p_spawn.add_argument("--workspace", default=None)
    p_spawn.set_defaults(func=cmd_spawn)

    p_reflect = sub.add_parser("reflect", help="poll a trigger script; dispatch its output as tasks", parents=[common])
    p_reflect.add_argument("trigger")
    p_reflect.add_argument("--interval", type=float, default=360.0)
    p_reflect.add_argument("--max-polls", type=int, default=None)
    p_reflect.add_argument("--workspace", default=None)
    p_reflect.set_defaults(func=cmd_reflect)

    p_watch = sub.add_parser("watch", help="dispatch a task when files appear in a directory", parents=[common])
    p_watch.add_argument("dir")
    p_watch.add_argument("--interval", type=float, default=5.0)
    p_watch.add_argument("--max-polls", type=int, default=None)
    p_watch.add_argument("--workspace", default=None)
    p_watch.set_defaults(func=cmd_watch)

    p_sched = sub.add_parser("schedule", help="dispatch a fixed prompt on a time interval", parents=[common])
    p_sched.add_argument("--every", type=float, default=360.0)
    p_sched.add_argument("--prompt", default="Consult your exploration procedure and continue.")
    p_sched.add_argument("--max-polls", type=int, default=None)
    p_sched.add_argument("--workspace", default=None)
    p_sched.set_defaults(func=cmd_schedule)

    p_mem = sub.add_parser("memory", help="store maintenance", parents=[common])
    p_mem.add_argument("subcommand", choices=["fsck", "show-l1", "archive-ls"])
    p_mem.set_defaults(func=cmd_memory)

    p_explore = sub.add_parser("explore", help="one poll/plan/execute exploration step", parents=[common])
    p_explore.add_argument("--category", default="general")
    p_explore.set_defaults(func=cmd_explore)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
