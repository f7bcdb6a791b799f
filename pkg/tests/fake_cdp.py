"""In-process DevTools-protocol stand-in for browser tests.

Speaks just enough CDP over a real WebSocket for BrowserHost: target
creation/attachment, navigation with load events, and Runtime.evaluate
dispatched on the expression's shape. Page behavior is configured per URL:
an extractor envelope to return, a navigation stall, or a thrown eval.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

from websockets.sync.server import serve


@dataclass
class FakePage:
    envelope: dict | None = None
    title: str = "fixture page"
    stall_navigation: bool = False
    exec_result: dict | None = None
    exec_exception: str | None = None


@dataclass
class FakeCdpServer:
    pages: dict[str, FakePage] = field(default_factory=dict)
    default_page: FakePage = field(default_factory=FakePage)
    evaluate_log: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._server = serve(self._handle, "127.0.0.1", 0)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def ws_url(self) -> str:
        port = self._server.socket.getsockname()[1]
        return f"ws://127.0.0.1:{port}"

    def close(self):
        self._server.shutdown()

    def page_for(self, url: str) -> FakePage:
        return self.pages.get(url, self.default_page)

    def _handle(self, ws):
        current_url = "about:blank"
        extractor_installed = False
        for raw in ws:
            msg = json.loads(raw)
            method = msg.get("method", "")
            params = msg.get("params", {})
            session_id = msg.get("sessionId")

            def reply(result: dict):
                out = {"id": msg["id"], "result": result}
                if session_id:
                    out["sessionId"] = session_id
                ws.send(json.dumps(out))

            def emit(event_method: str, event_params: dict | None = None):
                out = {"method": event_method, "params": event_params or {}}
                if session_id:
                    out["sessionId"] = session_id
                ws.send(json.dumps(out))

            if method == "Target.createTarget":
                reply({"targetId": "TARGET-1"})
            elif method == "Target.attachToTarget":
                reply({"sessionId": "SESSION-1"})
            elif method in ("Page.enable", "Runtime.enable"):
                reply({})
            elif method == "Page.navigate":
                current_url = params.get("url", "about:blank")
                extractor_installed = False
                page = self.page_for(current_url)
                reply({"frameId": "FRAME-1"})
                if not page.stall_navigation:
                    emit("Page.loadEventFired", {"timestamp": 1.0})
            elif method == "Runtime.evaluate":
                expression = params.get("expression", "")
                self.evaluate_log.append(expression)
                page = self.page_for(current_url)
                if "document.title" in expression and "page_delta" not in expression:
                    reply({"result": {"type": "string", "value": page.title}})
                elif "typeof window.__pageExtractor" in expression:
                    value = "object" if extractor_installed else "undefined"
                    reply({"result": {"type": "string", "value": value}})
                elif "__pageExtractor.extract(" in expression:
                    if page.envelope is None:
                        reply({"exceptionDetails": {"text": "extractor returned nothing"}})
                    else:
                        reply({"result": {"type": "string", "value": json.dumps(page.envelope)}})
                elif "page_delta" in expression:  # the web_execute_js wrapper
                    if page.exec_exception is not None:
                        reply({"exceptionDetails": {"text": page.exec_exception}})
                    else:
                        result = page.exec_result or {
                            "value_json": "null",
                            "error": None,
                            "page_delta": {
                                "url": current_url,
                                "title": page.title,
                                "url_changed": False,
                                "title_changed": False,
                                "mutations": 0,
                            },
                        }
                        reply({"result": {"type": "string", "value": json.dumps(result)}})
                else:
                    # extractor bundle installation (or anything else): accept
                    extractor_installed = True
                    reply({"result": {"type": "undefined"}})
            else:
                reply({})
