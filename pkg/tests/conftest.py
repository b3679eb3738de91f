import json
import math
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


class StubModelServer:
    """Local HTTP server speaking the next-token and mask-fill contracts.

    ``next_token`` maps the prompt text (already truncated at the blank) to
    ``{token: prob}``; ``mask_fill`` maps the masked text to ``{token: prob}``.
    """

    def __init__(self):
        self.next_token = {}
        self.mask_fill = {}
        self.requests = []
        self.fail_next = 0
        self.raw_override = None
        self.delay = 0.0
        self.active = 0
        self.max_active = 0
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                with stub._lock:
                    stub.active += 1
                    stub.max_active = max(stub.max_active, stub.active)
                try:
                    if stub.delay:
                        time.sleep(stub.delay)
                    self._handle()
                finally:
                    with stub._lock:
                        stub.active -= 1

            def _handle(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                with stub._lock:
                    stub.requests.append((self.path, body, dict(self.headers)))
                    failing = stub.fail_next > 0
                    if failing:
                        stub.fail_next -= 1
                if failing:
                    return self._send(503, {"error": "busy"})
                if stub.raw_override is not None:
                    return self._send(200, stub.raw_override)
                if self.path == "/next":
                    dist = stub.next_token.get(body["prompt"])
                    if dist is None:
                        return self._send(404, {"error": "unknown prompt"})
                    top = sorted(dist.items(), key=lambda kv: -kv[1])[: body["logprobs"]]
                    return self._send(200, {"top_logprobs": [[t, math.log(p)] for t, p in top]})
                if self.path == "/mask":
                    dist = stub.mask_fill.get(body["text"])
                    if dist is None:
                        return self._send(404, {"error": "unknown prompt"})
                    top = sorted(dist.items(), key=lambda kv: -kv[1])[: body["top_k"]]
                    return self._send(200, [{"token_str": t, "score": p} for t, p in top])
                self._send(404, {})

            def _send(self, code, payload):
                data = json.dumps(payload).encode()
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True)

    @property
    def url(self):
        host, port = self.httpd.server_address
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def stub_server():
    with StubModelServer() as server:
        yield server


@pytest.fixture(autouse=True)
def isolated_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("KNOWPROBE_CACHE_DIR", str(tmp_path / "cache"))
