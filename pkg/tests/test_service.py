from __future__ import annotations

import socket
import threading
import time
from contextlib import contextmanager
from pathlib import Path

import requests
import uvicorn
from fastapi.testclient import TestClient

from chops.evalharness import build_runtime, load_config
from chops.gateway import ScriptEntry, ScriptedProvider
from chops.service import create_app

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@contextmanager
def live_server(app):
    """Real uvicorn in a thread; the TestClient cannot stream SSE."""
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    server = uvicorn.Server(
        uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("server did not start")
        time.sleep(0.01)
    try:
        yield f"http://127.0.0.1:{port}"
    finally:
        server.should_exit = True
        thread.join(timeout=5)

GOLD_Q17 = "Please raise my upload limit to 12."


def _q17_entries():
    return [
        ScriptEntry("Classifier1", "", "NO"),
        ScriptEntry("Classifier2", "", "2"),
        ScriptEntry("Executor", "", "CALL ChangeAllTypesUploadLimit(userId=1, Limit=12)"),
        ScriptEntry("Verifier", "", "SCORE: 9\nREASON: matches the request"),
    ]


def _retry_entries():
    entries = []
    for i, score in enumerate([5, 6, 9], 1):
        entries.extend(
            [
                ScriptEntry("Classifier1", "", "NO"),
                ScriptEntry("Classifier2", "", "1"),
                ScriptEntry("Executor", "", f"attempt {i}"),
                ScriptEntry("Verifier", "", f"SCORE: {score}\nREASON: reason-{i}"),
            ]
        )
    return entries


class _SlowProvider:
    """Wraps a scripted provider, pausing before each reply so a test can
    connect mid-run."""

    def __init__(self, inner, delay: float):
        self.inner = inner
        self.delay = delay

    def complete(self, role, model_id, messages):
        time.sleep(self.delay)
        return self.inner.complete(role, model_id, messages)


def make_client(entries_factory, debug=False, token=None) -> TestClient:
    runtime = build_runtime(load_config(FIXTURES / "config.json"))
    app = create_app(
        runtime=runtime,
        provider_factory=lambda: ScriptedProvider(entries_factory()),
        debug=debug,
        token=token,
    )
    return TestClient(app)


def test_health():
    client = make_client(_q17_entries)
    response = client.get("/v1/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok"}


def test_create_session_and_unknown_nickname():
    client = make_client(_q17_entries)
    ok = client.post("/v1/sessions", json={"nickname": "alice_tl"})
    assert ok.status_code == 200
    body = ok.json()
    assert body["nickname"] == "alice_tl"
    assert len(body["session_id"]) >= 32  # >= 128 bits of entropy, urlsafe

    missing = client.post("/v1/sessions", json={"nickname": "ghost"})
    assert missing.status_code == 404
    assert missing.json()["code"] == "UnknownNickname"


def test_distinct_session_ids():
    client = make_client(_q17_entries)
    a = client.post("/v1/sessions", json={"nickname": "alice_tl"}).json()["session_id"]
    b = client.post("/v1/sessions", json={"nickname": "alice_tl"}).json()["session_id"]
    assert a != b


def test_post_message_runs_pipeline_and_mutates_once():
    client = make_client(_q17_entries)
    session = client.post("/v1/sessions", json={"nickname": "alice_tl"}).json()
    response = client.post(
        f"/v1/sessions/{session['session_id']}/messages", json={"query": GOLD_Q17}
    )
    assert response.status_code == 200
    body = response.json()
    assert "12" in body["reply"]
    assert body["executed"]["status"] == "Ok"
    assert body["executed"]["mutated"] is True
    assert body["trace_id"].startswith("tr-")

    trace = client.get(f"/v1/traces/{body['trace_id']}").json()
    assert trace["final"]["executed"]["status"] == "Ok"
    assert len(trace["records"]) == 1


def test_session_not_found():
    client = make_client(_q17_entries)
    response = client.post("/v1/sessions/nope/messages", json={"query": "hi"})
    assert response.status_code == 404
    assert response.json()["code"] == "SessionNotFound"


def test_trace_redaction_and_debug_mode():
    client = make_client(_q17_entries)
    session = client.post("/v1/sessions", json={"nickname": "alice_tl"}).json()
    trace_id = client.post(
        f"/v1/sessions/{session['session_id']}/messages", json={"query": GOLD_Q17}
    ).json()["trace_id"]
    redacted = client.get(f"/v1/traces/{trace_id}").json()
    for record in redacted["records"]:
        for prompt in record["prompts"].values():
            assert prompt.startswith("sha256:")

    debug_client = make_client(_q17_entries, debug=True)
    session = debug_client.post("/v1/sessions", json={"nickname": "alice_tl"}).json()
    trace_id = debug_client.post(
        f"/v1/sessions/{session['session_id']}/messages", json={"query": GOLD_Q17}
    ).json()["trace_id"]
    raw = debug_client.get(f"/v1/traces/{trace_id}").json()
    assert any(
        GOLD_Q17 in prompt for record in raw["records"] for prompt in record["prompts"].values()
    )


def test_unknown_trace_404():
    client = make_client(_q17_entries)
    assert client.get("/v1/traces/tr-unknown").status_code == 404


def test_tools_endpoint_exposed_catalog():
    client = make_client(_q17_entries)
    tools = client.get("/v1/tools").json()
    assert len(tools) == 10
    assert all(t["exposed"] for t in tools)
    names = {t["name"] for t in tools}
    assert "ChangeAllTypesUploadLimit" in names


def test_events_stream_replays_in_flight_question():
    runtime = build_runtime(load_config(FIXTURES / "config.json"))
    app = create_app(
        runtime=runtime,
        provider_factory=lambda: _SlowProvider(ScriptedProvider(_retry_entries()), 0.05),
    )
    with live_server(app) as base:
        session = requests.post(base + "/v1/sessions", json={"nickname": "alice_tl"}).json()
        session_id = session["session_id"]

        result: dict = {}

        def post():
            result["response"] = requests.post(
                f"{base}/v1/sessions/{session_id}/messages",
                json={"query": "how do I upload?"},
                timeout=30,
            )

        worker = threading.Thread(target=post)
        worker.start()
        time.sleep(0.15)  # a few stages have been emitted by now

        stages = []
        with requests.get(
            f"{base}/v1/sessions/{session_id}/events", stream=True, timeout=30
        ) as stream:
            for raw in stream.iter_lines():
                line = raw.decode("utf-8")
                if line.startswith("event: "):
                    stages.append(line.removeprefix("event: "))
                if stages and stages[-1] == "Done":
                    break
        worker.join(timeout=15)
        assert result["response"].status_code == 200
        # replay starts from the first stage of the in-flight question
        assert stages[0] == "Classified"
        assert stages.count("Verified") == 3
        assert stages.count("Retrying") == 2
        assert stages[-1] == "Done"

        trace_id = result["response"].json()["trace_id"]
        trace = requests.get(f"{base}/v1/traces/{trace_id}").json()
        assert stages.count("Classified") == len(trace["records"])


def test_second_concurrent_post_is_busy():
    runtime = build_runtime(load_config(FIXTURES / "config.json"))
    app = create_app(
        runtime=runtime,
        provider_factory=lambda: _SlowProvider(ScriptedProvider(_q17_entries()), 0.2),
    )
    client = TestClient(app)
    session = client.post("/v1/sessions", json={"nickname": "alice_tl"}).json()
    session_id = session["session_id"]

    first: dict = {}

    def post_first():
        first["response"] = client.post(
            f"/v1/sessions/{session_id}/messages", json={"query": GOLD_Q17}
        )

    worker = threading.Thread(target=post_first)
    worker.start()
    time.sleep(0.1)
    second = client.post(f"/v1/sessions/{session_id}/messages", json={"query": "again"})
    worker.join(timeout=10)
    assert second.status_code == 409
    assert second.json()["code"] == "Busy"
    assert first["response"].status_code == 200


def test_events_heartbeat_when_idle():
    runtime = build_runtime(load_config(FIXTURES / "config.json"))
    app = create_app(
        runtime=runtime, provider_factory=lambda: ScriptedProvider(_q17_entries())
    )
    with live_server(app) as base:
        session = requests.post(base + "/v1/sessions", json={"nickname": "alice_tl"}).json()
        url = f"{base}/v1/sessions/{session['session_id']}/events"
        with requests.get(url, stream=True, timeout=30) as stream:
            for raw in stream.iter_lines():
                line = raw.decode("utf-8")
                if line.startswith(":"):
                    break  # heartbeat received, no events emitted
                assert not line.startswith("event:")


def test_sessions_isolated_after_pipeline_failure():
    # a session whose provider script is empty-ish fails; another session still works
    def broken_entries():
        return [ScriptEntry("Verifier", "", "never matches the classifier")]

    runtime = build_runtime(load_config(FIXTURES / "config.json"))
    calls = {"n": 0}

    def factory():
        calls["n"] += 1
        if calls["n"] == 1:
            return ScriptedProvider(broken_entries())
        return ScriptedProvider(_q17_entries())

    client = TestClient(create_app(runtime=runtime, provider_factory=factory))
    s1 = client.post("/v1/sessions", json={"nickname": "bob_vice"}).json()["session_id"]
    s2 = client.post("/v1/sessions", json={"nickname": "alice_tl"}).json()["session_id"]
    failed = client.post(f"/v1/sessions/{s1}/messages", json={"query": "q"})
    assert failed.status_code == 502
    assert failed.json()["code"] == "ScriptExhausted"
    ok = client.post(f"/v1/sessions/{s2}/messages", json={"query": GOLD_Q17})
    assert ok.status_code == 200


def test_bearer_token_gate():
    client = make_client(_q17_entries, token="sekrit")
    assert client.get("/v1/health").status_code == 200  # health stays open
    denied = client.post("/v1/sessions", json={"nickname": "alice_tl"})
    assert denied.status_code == 401
    allowed = client.post(
        "/v1/sessions",
        json={"nickname": "alice_tl"},
        headers={"Authorization": "Bearer sekrit"},
    )
    assert allowed.status_code == 200


def test_history_visible_via_session_info():
    client = make_client(_q17_entries)
    session = client.post("/v1/sessions", json={"nickname": "alice_tl"}).json()
    client.post(f"/v1/sessions/{session['session_id']}/messages", json={"query": GOLD_Q17})
    info = client.get(f"/v1/sessions/{session['session_id']}").json()
    assert len(info["history"]) == 1
    assert info["history"][0]["query"] == GOLD_Q17


def test_reconnect_restores_history():
    client = make_client(_q17_entries)
    session = client.post("/v1/sessions", json={"nickname": "alice_tl"}).json()
    client.post(f"/v1/sessions/{session['session_id']}/messages", json={"query": GOLD_Q17})
    reconnected = client.post(
        "/v1/sessions",
        json={"nickname": "alice_tl", "session_id": session["session_id"]},
    ).json()
    assert reconnected["session_id"] == session["session_id"]
    assert len(reconnected["history"]) == 1
    stale = client.post("/v1/sessions", json={"nickname": "alice_tl", "session_id": "gone"})
    assert stale.status_code == 404
