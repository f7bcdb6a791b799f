"""Runtime configuration: one JSON file, dataclass-backed defaults.

The shipped defaults live in assets/default_config.json; a user config file
overrides them key by key.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

from .ledger import BudgetConfig


@dataclass
class ToolThresholds:
    """Stage-1 per-tool output character limits for content entering history."""

    code_run: int = 10_000
    web_execute_js: int = 8_000
    web_scan_text_only: int = 10_000
    web_scan_html: int = 35_000
    file_read_line: int = 1_280
    file_read_total: int = 20_000
    default: int = 10_000
    web_js_preview: int = 512
    key_info_cap: int = 2_000


@dataclass
class RuntimeConfig:
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    thresholds: ToolThresholds = field(default_factory=ToolThresholds)
    round_cap: int = 30
    max_output: int = 4_096
    backend: str = "scripted:script.json"
    model: str = "generic"
    base_prompt: str = (
        "You are a capable autonomous agent operating through a small set of "
        "atomic tools. Work step by step, verify results, and keep your "
        "working checkpoint current."
    )
    memory_root: str = "./memory"
    schema_resend_interval: int = 10
    schema_resend_prompt_fraction: float = 0.5
    anchor_ring_size: int = 20
    anchor_summary_chars: int = 120
    always_on_cap: int = 8_000
    hint_cap: int = 160
    self_improvement_visible: int = 20
    condense_word_budget: int = 60
    codify_after_runs: int = 2
    reflect_interval_s: float = 360.0
    code_run_timeout_s: float = 60.0
    navigation_timeout_s: float = 15.0
    browser_enabled: bool = False
    browser_binary: str | None = None
    browser_headless: bool = True
    evolution_auto: bool = False
    read_roots: list[str] | None = None

    @classmethod
    def defaults(cls) -> "RuntimeConfig":
        data = json.loads(resources.files("leanagent.assets").joinpath("default_config.json").read_text())
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "RuntimeConfig":
        cfg = cls.defaults()
        if path is not None:
            overrides = json.loads(Path(path).read_text())
            cfg.apply(overrides)
        return cfg

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RuntimeConfig":
        cfg = cls()
        cfg.apply(data)
        return cfg

    def apply(self, data: dict[str, Any]) -> None:
        for key, value in data.items():
            if key == "budget":
                self.budget = BudgetConfig(**value)
            elif key == "thresholds":
                self.thresholds = ToolThresholds(**value)
            elif key in {f.name for f in fields(self)}:
                setattr(self, key, value)
            else:
                raise KeyError(f"unknown config key {key!r}")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "budget":
                out[f.name] = {bf.name: getattr(value, bf.name) for bf in fields(BudgetConfig)}
            elif f.name == "thresholds":
                out[f.name] = {tf.name: getattr(value, tf.name) for tf in fields(ToolThresholds)}
            else:
                out[f.name] = value
        return out
