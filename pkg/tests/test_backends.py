import json
import socket
from concurrent.futures import ThreadPoolExecutor

import pytest

from tierflow.backends import (
    BackendFailure,
    ChatCompletionsBackend,
    EndpointConfig,
    FailureKind,
    ModelOutput,
    ScriptedBackend,
    ToolCall,
    default_registry,
    execute_tool,
    load_lookup_fixture,
)
from tierflow.config import fixture_path

MSGS = [{"role": "user", "content": "task"}]


def test_scripted_replay_and_exhaustion():
    b = ScriptedBackend([ModelOutput("hello", 3, 4, 1.25)])
    out = b.complete(MSGS)
    assert (out.text, out.prompt_tokens, out.completion_tokens, out.latency) == ("hello", 3, 4, 1.25)
    assert b.cursor == 1
    with pytest.raises(BackendFailure) as err:
        b.complete(MSGS)
    assert err.value.kind is FailureKind.SCRIPT_EXHAUSTED


def test_scripted_requires_messages():
    with pytest.raises(ValueError):
        ScriptedBackend([ModelOutput("x")]).complete([])


def test_scripted_from_file_is_deterministic(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({
        "schema_version": 1,
        "outputs": [
            {"text": "a", "prompt_tokens": 1, "completion_tokens": 2, "latency_seconds": 0.5},
            {"text": "b", "prompt_tokens": 3, "completion_tokens": 4, "latency_seconds": 1.5,
             "tool_calls": [{"name": "echo", "arguments": "hi"}]},
        ],
    }))
    runs = []
    for _ in range(2):
        b = ScriptedBackend.from_file(path)
        runs.append([b.complete(MSGS), b.complete(MSGS)])
    assert runs[0] == runs[1]
    assert runs[0][1].tool_calls == (ToolCall("echo", "hi"),)
    assert runs[0][1].latency == 1.5


def test_scripted_rejects_unknown_schema():
    with pytest.raises(ValueError):
        ScriptedBackend.from_dict({"schema_version": 99, "outputs": []})


def test_model_output_validation():
    with pytest.raises(ValueError):
        ModelOutput("x", -1, 0, 0.0)
    with pytest.raises(ValueError):
        ModelOutput("x", 0, 0, -0.1)


def test_live_backend_against_stub(stub_server):
    url, state = stub_server
    b = ChatCompletionsBackend(url, "small-model", api_key="sekrit")
    out = b.complete(MSGS)
    assert out.text == "hello from stub"
    assert out.latency > 0
    assert (out.prompt_tokens, out.completion_tokens) == (7, 3)
    req = state["requests"][0]
    assert req["path"] == "/v1/chat/completions"
    assert req["payload"]["model"] == "small-model"
    assert req["payload"]["messages"] == MSGS
    assert req["auth"] == "Bearer sekrit"


def test_live_backend_parses_tool_calls(stub_server):
    url, state = stub_server
    state["tool_calls"] = [{"id": "1", "type": "function", "function": {"name": "lookup", "arguments": "k"}}]
    out = ChatCompletionsBackend(url, "m").complete(MSGS)
    assert out.tool_calls == (ToolCall("lookup", "k"),)


def test_live_backend_retries_transient(stub_server):
    url, state = stub_server
    state["fail_first"] = 2
    out = ChatCompletionsBackend(url, "m", max_retries=3, backoff=0.01).complete(MSGS)
    assert out.text == "hello from stub"
    assert len(state["requests"]) == 3


def test_live_backend_gives_up(stub_server):
    url, state = stub_server
    state["fail_first"] = 10
    with pytest.raises(BackendFailure) as err:
        ChatCompletionsBackend(url, "m", max_retries=2, backoff=0.01).complete(MSGS)
    assert err.value.kind is FailureKind.HTTP_STATUS
    assert len(state["requests"]) == 3


def test_live_backend_client_error_not_retried(stub_server):
    url, state = stub_server
    state["fail_first"] = 1
    state["status"] = 400
    with pytest.raises(BackendFailure) as err:
        ChatCompletionsBackend(url, "m", max_retries=3, backoff=0.01).complete(MSGS)
    assert err.value.kind is FailureKind.HTTP_STATUS
    assert len(state["requests"]) == 1


def test_live_backend_timeout(stub_server):
    url, state = stub_server
    state["delay"] = 0.5
    with pytest.raises(BackendFailure) as err:
        ChatCompletionsBackend(url, "m", timeout=0.05, max_retries=1, backoff=0.01).complete(MSGS)
    assert err.value.kind is FailureKind.TIMEOUT


def test_live_backend_transport_failure():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    with pytest.raises(BackendFailure) as err:
        ChatCompletionsBackend(f"http://127.0.0.1:{port}/v1", "m", max_retries=1, backoff=0.01).complete(MSGS)
    assert err.value.kind is FailureKind.TRANSPORT


def test_live_backend_concurrent_calls(stub_server):
    url, state = stub_server
    b = ChatCompletionsBackend(url, "m")
    with ThreadPoolExecutor(8) as pool:
        outs = list(pool.map(lambda _: b.complete(MSGS), range(32)))
    assert all(o.text == "hello from stub" for o in outs)


def test_endpoint_config_reads_key_from_env(monkeypatch, stub_server):
    url, state = stub_server
    monkeypatch.setenv("TIERFLOW_TEST_KEY", "abc")
    backend = EndpointConfig(base_url=url, model="m", api_key_env="TIERFLOW_TEST_KEY").build("SMALL")
    backend.complete(MSGS)
    assert state["requests"][0]["auth"] == "Bearer abc"
    assert backend.label == "SMALL"


def test_inline_key_wins_over_env(monkeypatch):
    monkeypatch.setenv("TIERFLOW_TEST_KEY", "from-env")
    cfg = EndpointConfig(model="m", api_key_env="TIERFLOW_TEST_KEY", api_key="inline")
    assert cfg.build("LARGE").api_key == "inline"


def test_tools():
    reg = default_registry(load_lookup_fixture(fixture_path("lookup.json")))
    assert execute_tool("echo", "abc", reg) == "abc"
    assert execute_tool("lookup", "capital_of_france", reg) == "Paris"
    assert execute_tool("no_such_tool", "...", reg).startswith("ERROR: unknown tool")
    assert execute_tool("lookup", "missing_key", reg).startswith("ERROR: tool 'lookup' failed")
