"""Contract checks on the checked-in extractor bundle.

The bundle ships inside the package and is injected verbatim by the browser
host; these tests execute it under node against the fixture pages and hold
it to the host's envelope contract. Skipped when node or the frontend's
node_modules are unavailable.
"""

from __future__ import annotations

import json
import shutil
import subprocess
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
HARNESS = ROOT / "frontend" / "bundle-harness.mjs"
PAGES = Path(__file__).parent / "fixtures" / "pages"

needs_node = pytest.mark.skipif(
    shutil.which("node") is None or not (ROOT / "frontend" / "node_modules").exists(),
    reason="node or frontend dependencies unavailable",
)


def run_bundle(page: str, mode: str) -> dict:
    proc = subprocess.run(
        ["node", str(HARNESS), str(PAGES / page), mode],
        capture_output=True,
        text=True,
        timeout=60,
    )
    assert proc.returncode == 0, proc.stderr[-500:]
    return json.loads(proc.stdout)


def test_shipped_asset_matches_built_bundle():
    asset = (ROOT / "src" / "leanagent" / "assets" / "page_extractor.js").read_bytes()
    fixture = (ROOT / "tests" / "fixtures" / "extractor" / "page_extractor.js").read_bytes()
    assert asset == fixture
    assert b"__pageExtractor" in asset


@needs_node
def test_bundle_envelope_contract():
    out = run_bundle("article_hidden.html", "text_only")
    assert out["protocol"] == 1
    assert set(out["removed_counts"]) == {"hidden", "covered", "non_essential"}
    assert isinstance(out["interactives"], list)
    assert "Visible article title" in out["content"]
    assert "HIDDEN-SENTINEL" not in out["content"]


@needs_node
def test_bundle_overlay_exclusion():
    out = run_bundle("overlay_modal.html", "text_only")
    assert "COVERED-SENTINEL" not in out["content"]
    assert "Cookie consent required" in out["content"]


@needs_node
def test_bundle_html_mode_budget():
    out = run_bundle("content_heavy.html", "html")
    assert len(out["content"]) <= 35_000
    assert out["content"].startswith("<html")


@needs_node
def test_bundle_interactive_hints():
    out = run_bundle("interactives.html", "text_only")
    hints = {i["hint"] for i in out["interactives"]}
    assert "#submit" in hints
