import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from tierflow.backends import ModelOutput
from tierflow.progress import ProgressAssessment, emit_progress_block


def block(value: bool, reason: str = "checked") -> str:
    return emit_progress_block(ProgressAssessment(reason, value))


class SharedScript:
    """Progress values consumed in global step order, whichever tier runs the step.

    Each THINK output carries an inline PROGRESS block, so one backend call
    is one step.
    """

    def __init__(self, values, answer_at=None, latency=None, tokens=None):
        self.values = list(values)
        self.answer_at = answer_at
        self.latency = latency or {"SMALL": 1.0, "LARGE": 4.0}
        self.tokens = tokens or {"SMALL": 10, "LARGE": 30}
        self.step = 0

    def backend(self, label):
        script = self

        class _Backend:
            def __init__(self):
                self.label = label
                self.calls = []

            def complete(self, messages, params=None):
                self.calls.append(list(messages))
                i = script.step
                script.step += 1
                text = f"{label} step {i + 1}\n"
                if script.answer_at is not None and i + 1 == script.answer_at:
                    text += "FINAL_ANSWER: 42\n"
                text += block(script.values[i])
                return ModelOutput(text, 5, script.tokens[label], script.latency[label])

        return _Backend()

    def backends(self):
        return self.backend("SMALL"), self.backend("LARGE")


@pytest.fixture
def stub_server():
    """Local chat-completions stub. Yields (base_url, state); ``state`` controls replies."""
    state = {"body": "hello from stub", "fail_first": 0, "status": 500, "requests": [], "delay": 0.0,
             "tool_calls": None}

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def do_POST(self):
            import time

            length = int(self.headers.get("Content-Length", 0))
            payload = json.loads(self.rfile.read(length))
            state["requests"].append({"path": self.path, "payload": payload, "auth": self.headers.get("Authorization")})
            if state["delay"]:
                time.sleep(state["delay"])
            if state["fail_first"] > 0:
                state["fail_first"] -= 1
                self.send_response(state["status"])
                self.end_headers()
                return
            message = {"role": "assistant", "content": state["body"]}
            if state["tool_calls"]:
                message["tool_calls"] = state["tool_calls"]
            body = json.dumps(
                {"choices": [{"message": message}], "usage": {"prompt_tokens": 7, "completion_tokens": 3}}
            ).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/v1", state
    server.shutdown()
    server.server_close()
