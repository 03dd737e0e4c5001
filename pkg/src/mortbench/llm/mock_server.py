"""Scriptable in-process chat-completions endpoint for tests and demos.

The script maps a substring of the user message (narratives are unique per
patient, so any distinguishing fragment works as a patient key) to the
sequence of replies for that patient's successive attempts. Integer entries
are returned as bare HTTP status codes to exercise transport/auth handling.
All received request bodies are captured for traffic assertions.
"""
from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class MockChatServer:
    def __init__(
        self,
        script: dict[str, list] | None = None,
        default: list | str = "The patient will survive.",
        require_key: str = "",
    ):
        self.script = dict(script or {})
        self.default = [default] if isinstance(default, (str, int)) else list(default)
        self.require_key = require_key
        self.traffic: list[dict] = []
        self._counts: dict[str, int] = {}
        self._lock = threading.Lock()
        self._httpd: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    # -- scripting ---------------------------------------------------------
    def _next_reply(self, user_text: str) -> tuple:
        """Pick (reply, matched_key, attempt#) for this request."""
        with self._lock:
            for key, replies in self.script.items():
                if key in user_text:
                    n = self._counts.get(key, 0)
                    self._counts[key] = n + 1
                    seq = replies if isinstance(replies, list) else [replies]
                    return seq[min(n, len(seq) - 1)], key, n + 1
            n = self._counts.get("", 0)
            self._counts[""] = n + 1
            return self.default[min(n, len(self.default) - 1)], None, n + 1

    def _record(self, path: str, headers: dict, body: dict, key, attempt: int):
        with self._lock:
            self.traffic.append(
                {"path": path, "headers": headers, "body": body, "matched_key": key, "attempt": attempt}
            )

    # -- lifecycle ---------------------------------------------------------
    def start(self) -> str:
        server = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 (http.server API)
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except ValueError:
                    body = {}
                auth = self.headers.get("Authorization", "")
                user_text = ""
                for msg in body.get("messages", []):
                    if msg.get("role") == "user":
                        user_text = msg.get("content", "")
                if server.require_key and auth != f"Bearer {server.require_key}":
                    server._record(self.path, {"Authorization": auth}, body, None, 0)
                    self.send_response(401)
                    self.end_headers()
                    return
                reply, key, attempt = server._next_reply(user_text)
                server._record(self.path, {"Authorization": auth}, body, key, attempt)
                if isinstance(reply, int):
                    self.send_response(reply)
                    self.end_headers()
                    return
                payload = json.dumps(
                    {"id": "mock", "choices": [{"message": {"role": "assistant", "content": reply}}]}
                ).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):  # silence per-request stderr noise
                pass

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        host, port = self._httpd.server_address
        return f"http://{host}:{port}/v1/chat/completions"

    def stop(self):
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._httpd = None

    def __enter__(self):
        self.url = self.start()
        return self

    def __exit__(self, *exc):
        self.stop()
        return False

    # -- assertions --------------------------------------------------------
    def request_bodies(self) -> list[dict]:
        with self._lock:
            return [t["body"] for t in self.traffic]

    def reset_traffic(self):
        with self._lock:
            self.traffic.clear()
            self._counts.clear()
