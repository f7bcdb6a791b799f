"""Host side of web interaction: a DevTools-protocol session to a real
browser, structured page observation via the injected extractor script, and
output budgets.

Single-tab model: one PageSession per agent session, so page-change
observations stay well-defined. Protocol messages are request/response
correlated by id; no concurrent evals.
"""

from __future__ import annotations

import hashlib
import json
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import requests
from websockets.sync.client import connect as ws_connect

from .toolkit import ToolResult
from .truncation import truncate_head_tail

CHROME_CANDIDATES = (
    "chromium",
    "chromium-browser",
    "google-chrome",
    "google-chrome-stable",
    "headless_shell",
)


def find_browser_binary() -> str | None:
    for name in CHROME_CANDIDATES:
        path = shutil.which(name)
        if path:
            return path
    return None


class CdpError(Exception):
    """Protocol-level failure, naming the step that failed."""

    def __init__(self, step: str, detail: str):
        super().__init__(f"{step}: {detail}")
        self.step = step
        self.detail = detail


class NavigationTimeout(CdpError):
    def __init__(self, url: str, partial_title: str):
        super().__init__("Page.navigate", f"timeout loading {url}; partial title: {partial_title!r}")
        self.partial_title = partial_title


@dataclass
class PageSession:
    target_id: str
    session_id: str
    url: str = "about:blank"
    last_scan_digest: str = ""
    extractor_installed: bool = False


@dataclass
class ScanResult:
    mode: str
    content: str
    removed_counts: dict[str, int] = field(default_factory=dict)
    truncated: bool = False

    @property
    def char_len(self) -> int:
        return len(self.content)


class CdpConnection:
    """Synchronous CDP transport: calls correlated by id, events queued."""

    def __init__(self, ws_url: str, *, timeout_s: float = 15.0):
        self.timeout_s = timeout_s
        self._ws = ws_connect(ws_url, max_size=64 * 1024 * 1024, open_timeout=timeout_s)
        self._next_id = 0
        self._events: list[dict] = []

    def close(self) -> None:
        self._ws.close()

    def call(self, method: str, params: dict | None = None, *, session_id: str | None = None,
             timeout_s: float | None = None) -> dict:
        self._next_id += 1
        msg: dict = {"id": self._next_id, "method": method, "params": params or {}}
        if session_id:
            msg["sessionId"] = session_id
        self._ws.send(json.dumps(msg))
        deadline = time.monotonic() + (timeout_s if timeout_s is not None else self.timeout_s)
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise CdpError(method, "response timeout")
            try:
                raw = self._ws.recv(timeout=remaining)
            except TimeoutError:
                raise CdpError(method, "response timeout")
            obj = json.loads(raw)
            if obj.get("id") == self._next_id:
                if "error" in obj:
                    raise CdpError(method, obj["error"].get("message", "unknown CDP error"))
                return obj.get("result", {})
            if "method" in obj:
                self._events.append(obj)

    def wait_event(self, method: str, *, session_id: str | None = None, timeout_s: float = 15.0) -> dict | None:
        def matches(e: dict) -> bool:
            return e.get("method") == method and (session_id is None or e.get("sessionId") == session_id)

        for i, e in enumerate(self._events):
            if matches(e):
                return self._events.pop(i)
        deadline = time.monotonic() + timeout_s
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            try:
                raw = self._ws.recv(timeout=remaining)
            except TimeoutError:
                return None
            obj = json.loads(raw)
            if matches(obj):
                return obj
            if "method" in obj:
                self._events.append(obj)


def extractor_source() -> str:
    return resources.files("leanagent.assets").joinpath("page_extractor.js").read_text()


_EXEC_WRAPPER = """
(function() {
  var __pre = {url: location.href, title: document.title};
  var __obs = null;
  try {
    __obs = new MutationObserver(function(){});
    __obs.observe(document.documentElement || document,
      {childList: true, subtree: true, attributes: true, characterData: true});
  } catch (e) {}
  var __value = null, __error = null;
  try { __value = eval(%s); }
  catch (e) { __error = String((e && e.message) || e); }
  var __mutations = 0;
  if (__obs) { __mutations = __obs.takeRecords().length; __obs.disconnect(); }
  if (__value === undefined) __value = null;
  var __out;
  try { __out = JSON.stringify(__value); }
  catch (e) { __out = JSON.stringify(String(__value)); }
  return JSON.stringify({
    value_json: __out === undefined ? "null" : __out,
    error: __error,
    page_delta: {
      url: location.href,
      title: document.title,
      url_changed: location.href !== __pre.url,
      title_changed: document.title !== __pre.title,
      mutations: __mutations
    }
  });
})()
"""


class BrowserHost:
    """Owns the protocol connection and the single page session."""

    def __init__(self, conn: CdpConnection, thresholds, *, navigation_timeout_s: float = 15.0,
                 process: subprocess.Popen | None = None):
        self.conn = conn
        self.thresholds = thresholds
        self.navigation_timeout_s = navigation_timeout_s
        self.process = process
        self.page: PageSession | None = None
        self.last_removed_counts: dict[str, int] = {}

    @classmethod
    def launch(cls, thresholds, *, binary: str | None = None, headless: bool = True,
               port: int = 9222, navigation_timeout_s: float = 15.0) -> "BrowserHost":
        binary = binary or find_browser_binary()
        if binary is None:
            raise CdpError("launch", "no browser binary found")
        user_dir = tempfile.mkdtemp(prefix="leanagent-browser-")
        argv = [
            binary,
            f"--remote-debugging-port={port}",
            f"--user-data-dir={user_dir}",
            "--no-first-run",
            "--no-default-browser-check",
            "--disable-gpu",
            "--no-sandbox",
        ]
        if headless:
            argv.append("--headless=new")
        process = subprocess.Popen(argv, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        ws_url = None
        deadline = time.monotonic() + 20
        while time.monotonic() < deadline:
            try:
                ws_url = requests.get(f"http://127.0.0.1:{port}/json/version", timeout=2).json()[
                    "webSocketDebuggerUrl"
                ]
                break
            except (requests.RequestException, KeyError):
                time.sleep(0.2)
        if ws_url is None:
            process.terminate()
            raise CdpError("launch", "browser did not expose a debugger endpoint")
        return cls(CdpConnection(ws_url), thresholds, navigation_timeout_s=navigation_timeout_s, process=process)

    @classmethod
    def connect(cls, ws_url: str, thresholds, *, navigation_timeout_s: float = 15.0) -> "BrowserHost":
        return cls(CdpConnection(ws_url), thresholds, navigation_timeout_s=navigation_timeout_s)

    def close(self) -> None:
        try:
            self.conn.close()
        finally:
            if self.process is not None:
                self.process.terminate()

    # --- session plumbing -------------------------------------------------

    def _ensure_page(self) -> PageSession:
        if self.page is not None:
            return self.page
        created = self.conn.call("Target.createTarget", {"url": "about:blank"})
        target_id = created["targetId"]
        attached = self.conn.call("Target.attachToTarget", {"targetId": target_id, "flatten": True})
        session_id = attached["sessionId"]
        self.conn.call("Page.enable", session_id=session_id)
        self.conn.call("Runtime.enable", session_id=session_id)
        self.page = PageSession(target_id=target_id, session_id=session_id)
        return self.page

    def _navigate(self, url: str) -> None:
        page = self._ensure_page()
        self.conn.call("Page.navigate", {"url": url}, session_id=page.session_id)
        loaded = self.conn.wait_event(
            "Page.loadEventFired", session_id=page.session_id, timeout_s=self.navigation_timeout_s
        )
        page.extractor_installed = False
        if loaded is None:
            title = ""
            try:
                title = self._evaluate("document.title", step="partial-title probe")
            except CdpError:
                pass
            raise NavigationTimeout(url, str(title))
        page.url = url

    def _evaluate(self, expression: str, *, step: str, timeout_s: float | None = None):
        page = self._ensure_page()
        result = self.conn.call(
            "Runtime.evaluate",
            {"expression": expression, "returnByValue": True, "awaitPromise": False},
            session_id=page.session_id,
            timeout_s=timeout_s,
        )
        if "exceptionDetails" in result:
            detail = result["exceptionDetails"]
            text = detail.get("exception", {}).get("description") or detail.get("text", "evaluation failed")
            if "context" in text.lower() and "destroyed" in text.lower():
                raise CdpError(step, f"stale context: {text}")
            raise CdpError(step, text)
        return result.get("result", {}).get("value")

    def _install_extractor(self) -> None:
        page = self._ensure_page()
        if page.extractor_installed:
            return
        self._evaluate(extractor_source(), step="extractor injection")
        probe = self._evaluate("typeof window.__pageExtractor", step="extractor injection")
        if probe != "object":
            raise CdpError("extractor injection", f"extractor global missing (typeof = {probe})")
        page.extractor_installed = True

    # --- the two web tools --------------------------------------------------

    def scan(self, *, url: str | None = None, mode: str = "text_only") -> ScanResult:
        """Structured page observation under the mode budget.

        Raises CdpError on protocol/extractor failures; web_scan converts
        those into error results.
        """
        if url:
            self._navigate(url)
        self._install_extractor()
        raw = self._evaluate(
            f"window.__pageExtractor.extract({json.dumps(mode)})", step="extract call"
        )
        try:
            envelope = json.loads(raw)
            content = envelope["content"]
            removed = {
                "hidden": int(envelope.get("removed_counts", {}).get("hidden", 0)),
                "covered": int(envelope.get("removed_counts", {}).get("covered", 0)),
                "non_essential": int(envelope.get("removed_counts", {}).get("non_essential", 0)),
            }
        except (TypeError, KeyError, ValueError, json.JSONDecodeError) as exc:
            raise CdpError("envelope parse", f"extractor envelope unparseable: {exc}")
        if envelope.get("error"):
            raise CdpError("extract call", f"extractor error: {envelope['error']}")

        truncated = False
        if mode == "text_only":
            content, truncated = truncate_head_tail(content, self.thresholds.web_scan_text_only)
        elif len(content) > self.thresholds.web_scan_html:
            # html budget is enforced by subtree pruning inside the page;
            # an over-budget envelope means the extractor misbehaved
            raise CdpError(
                "extract call",
                f"extractor returned over-budget html ({len(content)} > "
                f"{self.thresholds.web_scan_html} chars)",
            )

        page = self._ensure_page()
        page.last_scan_digest = hashlib.sha256(content.encode("utf-8")).hexdigest()
        self.last_removed_counts = dict(removed)
        return ScanResult(mode=mode, content=content, removed_counts=removed, truncated=truncated)

    def web_scan(self, *, url: str | None = None, mode: str = "text_only") -> ToolResult:
        try:
            result = self.scan(url=url, mode=mode)
        except NavigationTimeout as exc:
            return ToolResult("", "error", f"navigation timeout: {exc.detail}")
        except CdpError as exc:
            return ToolResult("", "error", f"web_scan failed at {exc.step}: {exc.detail}")
        # removed_counts stay host-side diagnostics; the payload is the
        # observation itself so the mode budget is the payload bound
        return ToolResult("", "ok", result.content, truncated=result.truncated)

    def web_execute_js(self, script: str, *, save_to_file: Path | None = None) -> ToolResult:
        try:
            self._ensure_page()
            raw = self._evaluate(_EXEC_WRAPPER % json.dumps(script), step="script evaluation")
            outcome = json.loads(raw)
        except CdpError as exc:
            return ToolResult("", "error", f"web_execute_js failed at {exc.step}: {exc.detail}")
        except (TypeError, json.JSONDecodeError) as exc:
            return ToolResult("", "error", f"execution envelope unparseable: {exc}")

        if outcome.get("error"):
            return ToolResult("", "error", f"script threw: {outcome['error']}")

        value_json = outcome.get("value_json", "null")
        delta = outcome.get("page_delta", {})
        delta_line = (
            f"page_delta: url_changed={delta.get('url_changed')} "
            f"title_changed={delta.get('title_changed')} mutations={delta.get('mutations')}"
        )
        if delta.get("url_changed"):
            page = self._ensure_page()
            page.url = delta.get("url", page.url)

        if save_to_file is not None:
            save_to_file.parent.mkdir(parents=True, exist_ok=True)
            save_to_file.write_text(value_json, encoding="utf-8")
            preview = value_json[: self.thresholds.web_js_preview]
            payload = (
                f"saved {len(value_json)} chars to {save_to_file}\n"
                f"preview: {preview}\n{delta_line}"
            )
            return ToolResult("", "ok", payload, side_channel=str(save_to_file))

        payload = f"value: {value_json}\n{delta_line}"
        truncated = False
        if len(payload) > self.thresholds.web_execute_js:
            payload, truncated = truncate_head_tail(payload, self.thresholds.web_execute_js)
        return ToolResult("", "ok", payload, truncated=truncated)
