from __future__ import annotations

import pytest

from leanagent.config import RuntimeConfig
from leanagent.gateway import ModelReply, ScriptStep, ScriptedBackend
from leanagent.kernel import SessionState, new_session
from leanagent.memory import MemoryStore
from leanagent.messages import ToolCall


@pytest.fixture
def config() -> RuntimeConfig:
    return RuntimeConfig.defaults()


@pytest.fixture
def store(tmp_path, config) -> MemoryStore:
    return MemoryStore(
        tmp_path / "mem",
        always_on_cap=config.always_on_cap,
        hint_cap=config.hint_cap,
        self_improvement_visible=config.self_improvement_visible,
    )


@pytest.fixture
def workspace(tmp_path):
    ws = tmp_path / "ws"
    ws.mkdir()
    return ws


def tool_step(call_id: str, name: str, arguments: dict, *, expect: str | None = None) -> ScriptStep:
    reply = ModelReply(tool_calls=(ToolCall(call_id, name, arguments),))
    return ScriptStep(reply=reply, expect_substring=expect)


def text_step(text: str, *, expect: str | None = None) -> ScriptStep:
    return ScriptStep(reply=ModelReply(text=text), expect_substring=expect)


@pytest.fixture
def make_state(config, store, workspace):
    """SessionState factory for tests that poke the toolkit directly."""

    def factory(task: str = "test task", mode: str = "interact", *, steps=None, **kwargs) -> SessionState:
        backend = ScriptedBackend(steps or [])
        return new_session(
            task,
            mode,
            config,
            backend=backend,
            store=store,
            workspace_dir=workspace,
            **kwargs,
        )

    return factory
