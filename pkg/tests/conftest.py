import json
import sys
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from umlforge.corpus import build_corpus, write_corpus  # noqa: E402
from umlforge.generator import GenConfig  # noqa: E402
from umlforge.grammar import DiagramKind  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


class StubServer:
    """Local inference endpoint with scriptable behaviour.

    ``answers`` maps the base64 image of a request to the text returned;
    ``default`` is used otherwise. ``fail_first`` requests get ``fail_status``.
    """

    def __init__(self) -> None:
        self.answers: dict[str, str] = {}
        self.default = "stub output"
        self.delay = 0.0
        self.fail_first = 0
        self.fail_status = 500
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                with stub._lock:
                    stub.requests.append(body)
                    stub.headers.append(dict(self.headers))
                    stub.in_flight += 1
                    stub.max_in_flight = max(stub.max_in_flight, stub.in_flight)
                    failing = len(stub.requests) <= stub.fail_first
                try:
                    if stub.delay:
                        time.sleep(stub.delay)
                    if self.path != "/generate":
                        self._reply(404, {"error": "not found"})
                    elif failing:
                        self._reply(stub.fail_status, {"error": "scripted failure"})
                    else:
                        text = stub.answers.get(body.get("image"), stub.default)
                        self._reply(200, {"text": text})
                finally:
                    with stub._lock:
                        stub.in_flight -= 1

            def _reply(self, status, payload):
                data = json.dumps(payload).encode()
                try:
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                except (BrokenPipeError, ConnectionResetError):
                    pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.server.daemon_threads = True
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}"
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self._thread.start()

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def stub():
    server = StubServer()
    yield server
    server.close()


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A rendered 20-entry sequence corpus shared by read-only tests."""
    root = tmp_path_factory.mktemp("corpus")
    corpus = build_corpus(GenConfig(seed=11, kind=DiagramKind.SEQUENCE), 20)
    write_corpus(corpus, root)
    return corpus, root


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
