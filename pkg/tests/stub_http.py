"""Scriptable HTTP server speaking the backend wire protocol, for tests.

Backed by the package's deterministic StubBackend, with knobs to inject
transient 503s per prompt, serve deliberately out-of-spec audio or
wrong-dimension embeddings, delay responses, and record the high-water mark
of concurrent in-flight requests.
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from corpusforge.audio import encode_wav
from corpusforge.orchestrator import ClipSpec
from corpusforge.stub_backend import StubBackend


class StubHttpServer:
    def __init__(
        self,
        identity: str = "stub",
        fail_503: dict[str, int] | None = None,
        response_delay_s: float = 0.0,
        wrong_sample_rate: int | None = None,
        embed_dim: int | None = None,
        reject_all_embeds: bool = False,
    ):
        self.backend = StubBackend()
        self.identity = identity
        self.fail_503 = dict(fail_503 or {})  # prompt substring -> remaining 503s
        self.response_delay_s = response_delay_s
        self.wrong_sample_rate = wrong_sample_rate
        self.embed_dim = embed_dim
        self.reject_all_embeds = reject_all_embeds

        self._lock = threading.Lock()
        self.in_flight = 0
        self.high_water = 0
        self.request_count = 0

        handler = self._make_handler()
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), handler)
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.httpd.server_address[1]}"

    def start(self) -> "StubHttpServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()

    def _enter(self) -> None:
        with self._lock:
            self.in_flight += 1
            self.request_count += 1
            self.high_water = max(self.high_water, self.in_flight)

    def _exit(self) -> None:
        with self._lock:
            self.in_flight -= 1

    def _scripted_503(self, prompt: str) -> bool:
        with self._lock:
            for key, remaining in self.fail_503.items():
                if key in prompt and remaining > 0:
                    self.fail_503[key] = remaining - 1
                    return True
        return False

    def _make_handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _reply(self, status: int, body: bytes, content_type: str) -> None:
                self.send_response(status)
                self.send_header("Content-Type", content_type)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def _reply_json(self, status: int, obj) -> None:
                self._reply(status, json.dumps(obj).encode(), "application/json")

            def do_GET(self):
                if self.path == "/v1/health":
                    self._reply_json(200, {"backend_identity": server.identity})
                else:
                    self._reply_json(404, {"error": "not found"})

            def do_POST(self):
                server._enter()
                try:
                    if server.response_delay_s:
                        time.sleep(server.response_delay_s)
                    length = int(self.headers.get("Content-Length", 0))
                    body = self.rfile.read(length)
                    if self.path == "/v1/generate":
                        self._generate(body)
                    elif self.path == "/v1/embed":
                        self._embed(body)
                    else:
                        self._reply_json(404, {"error": "not found"})
                finally:
                    server._exit()

            def _generate(self, body: bytes) -> None:
                req = json.loads(body)
                if server._scripted_503(req["prompt"]):
                    self._reply_json(503, {"error": "overloaded"})
                    return
                spec = ClipSpec(
                    duration_s=req["duration_s"],
                    sample_rate_hz=req["sample_rate_hz"],
                    channels=req["channels"],
                )
                if req["channels"] != 1:
                    self._reply_json(422, {"error": "mono only"})
                    return
                wav = server.backend.generate(req["prompt"], req["seed"], spec)
                if server.wrong_sample_rate is not None:
                    n = round(spec.duration_s * server.wrong_sample_rate)
                    wav = encode_wav(
                        np.zeros(n, dtype=np.int16), server.wrong_sample_rate, 1
                    )
                self._reply(200, wav, "audio/wav")

            def _embed(self, body: bytes) -> None:
                if server.reject_all_embeds:
                    self._reply_json(503, {"error": "overloaded"})
                    return
                vector = server.backend.embed(body)
                if server.embed_dim is not None:
                    vector = vector[: server.embed_dim] + [0.0] * max(
                        0, server.embed_dim - len(vector)
                    )
                self._reply_json(200, {"dim": len(vector), "embedding": vector})

        return Handler
