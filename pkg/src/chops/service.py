"""HTTP front door: sessions, one-question-at-a-time runs, SSE stage events.

Sessions are keyed by nickname (the task's identity model); an optional
shared bearer token gates the whole service. Stage events stream to the
console over server-sent events while a question is running, and full
traces are retrievable afterwards with prompts redacted to digests
unless debug mode is on.
"""

from __future__ import annotations

import hashlib
import json
import secrets
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterator

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse

from .evalharness import EvalConfig, Runtime, build_runtime, load_config, make_engine
from .gateway import Gateway, ScriptedProvider, UsageLedger
from .pipeline import Call, CEV, PipelineTrace, Strategy
from .store import UnknownNickname
from .tools import catalog_export_records

HEARTBEAT_SECONDS = 1.0


@dataclass
class Session:
    session_id: str
    nickname: str
    created_at: str
    history: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    question_seq: int = 0
    in_flight: bool = False
    cond: threading.Condition = field(default_factory=threading.Condition)
    busy: threading.Lock = field(default_factory=threading.Lock)


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


def _redact(text: str) -> str:
    return "sha256:" + hashlib.sha256(text.encode("utf-8")).hexdigest()


def trace_to_dict(trace: PipelineTrace, debug: bool) -> dict:
    records = []
    for r in trace.records:
        if isinstance(r.outcome, Call):
            outcome = {"kind": "call", "call": r.outcome.raw}
        else:
            outcome = {"kind": "answer", "text": r.outcome.text}
        verdict = None
        if r.verdict is not None:
            verdict = {"score": r.verdict.score, "reason": r.verdict.reason, "valid": r.verdict.valid}
        records.append(
            {
                "index": r.index,
                "class": r.query_class.label if r.query_class is not None else None,
                "context": r.context_summary,
                "outcome": outcome,
                "verdict": verdict,
                "threshold": r.threshold,
                "prompts": {k: (v if debug else _redact(v)) for k, v in r.prompts.items()},
            }
        )
    final = None
    if trace.final is not None:
        executed = None
        if trace.final.executed is not None:
            executed = {
                "status": trace.final.executed.status,
                "payload": trace.final.executed.payload,
                "mutated": trace.final.executed.mutated,
            }
        final = {"text": trace.final.text, "executed": executed}
    return {
        "trace_id": trace.trace_id,
        "strategy": trace.strategy,
        "fallback_used": trace.fallback_used,
        "usage": {m: {"in": v[0], "out": v[1]} for m, v in sorted(trace.usage.items())},
        "records": records,
        "final": final,
    }


def create_app(
    config_path: str | Path | None = None,
    *,
    runtime: Runtime | None = None,
    provider_factory: Callable[[], object] | None = None,
    strategy: Strategy = CEV,
    debug: bool = False,
    token: str | None = None,
    static_dir: str | Path | None = None,
) -> FastAPI:
    """Build the service app from a config file or pre-built runtime parts."""
    if runtime is None:
        assert config_path is not None, "need a config file or a runtime"
        config: EvalConfig = load_config(config_path)
        runtime = build_runtime(config)
        if provider_factory is None:
            provider_cfg = runtime.config.provider
            if provider_cfg.get("type") == "http":
                from .gateway import HttpChatProvider

                shared = HttpChatProvider(
                    base_url=provider_cfg["base_url"],
                    api_key_env=provider_cfg.get("api_key_env", "CHOPS_API_KEY"),
                )
                provider_factory = lambda: shared
            else:
                transcript = provider_cfg.get("transcript")
                if transcript is None:
                    raise ValueError("scripted serve needs provider.transcript in the config")
                transcript_path = runtime.config.root / transcript
                provider_factory = lambda: ScriptedProvider.from_file(transcript_path)
    assert provider_factory is not None, "need a provider factory with a pre-built runtime"

    app = FastAPI(title="chops chat service")
    sessions: dict[str, Session] = {}
    traces: dict[str, PipelineTrace] = {}
    state_lock = threading.Lock()
    ledger = UsageLedger()

    def check_auth(request: Request) -> JSONResponse | None:
        if token is None:
            return None
        header = request.headers.get("authorization", "")
        if header == f"Bearer {token}":
            return None
        return _error(401, "Unauthorized", "missing or invalid bearer token")

    def get_session(session_id: str) -> Session | None:
        with state_lock:
            return sessions.get(session_id)

    @app.get("/v1/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/v1/sessions")
    def create_session(body: dict, request: Request):
        if (denied := check_auth(request)) is not None:
            return denied
        nickname = body.get("nickname", "")
        try:
            runtime.store.profile_by_nickname(nickname)
        except UnknownNickname:
            return _error(404, "UnknownNickname", f"no user nicknamed {nickname!r}")
        # reconnect path: an existing session id restores history instead of
        # creating a fresh session (the console stores the id across reloads)
        existing_id = body.get("session_id")
        if existing_id:
            session = get_session(existing_id)
            if session is None or session.nickname != nickname:
                return _error(404, "SessionNotFound", "no such session to reconnect")
            return {
                "session_id": session.session_id,
                "nickname": session.nickname,
                "created_at": session.created_at,
                "history": session.history,
            }
        session = Session(
            session_id=secrets.token_urlsafe(32),
            nickname=nickname,
            created_at=datetime.now(timezone.utc).isoformat(),
        )
        with state_lock:
            sessions[session.session_id] = session
        return {
            "session_id": session.session_id,
            "nickname": session.nickname,
            "created_at": session.created_at,
            "history": [],
        }

    @app.get("/v1/sessions/{session_id}")
    def session_info(session_id: str, request: Request):
        if (denied := check_auth(request)) is not None:
            return denied
        session = get_session(session_id)
        if session is None:
            return _error(404, "SessionNotFound", "no such session")
        return {
            "session_id": session.session_id,
            "nickname": session.nickname,
            "created_at": session.created_at,
            "history": session.history,
        }

    @app.post("/v1/sessions/{session_id}/messages")
    def post_message(session_id: str, body: dict, request: Request):
        if (denied := check_auth(request)) is not None:
            return denied
        session = get_session(session_id)
        if session is None:
            return _error(404, "SessionNotFound", "no such session")
        query = body.get("query", "")
        if not query:
            return _error(400, "BadRequest", "query must be non-empty")
        if not session.busy.acquire(blocking=False):
            return _error(409, "Busy", "a question is already in flight for this session")
        trace_id = f"tr-{secrets.token_hex(8)}"
        try:
            with session.cond:
                session.question_seq += 1
                session.in_flight = True
                seq = session.question_seq

            def on_event(stage: str, payload: dict) -> None:
                event = {
                    "session_id": session.session_id,
                    "seq": seq,
                    "stage": stage,
                    "payload": payload,
                }
                with session.cond:
                    session.events.append(event)
                    session.cond.notify_all()

            gateway = Gateway(runtime.bindings, provider_factory(), runtime.pricing, ledger)
            engine = make_engine(runtime, gateway)
            try:
                final, trace = engine.run(
                    session.nickname, query, strategy,
                    on_event=on_event, question_label=trace_id,
                )
            except UnknownNickname:
                return _error(404, "UnknownNickname", session.nickname)
            except Exception as exc:  # pipeline/provider failures -> structured reply
                return _error(502, type(exc).__name__, str(exc))
            with state_lock:
                traces[trace_id] = trace
            session.history.append({"query": query, "reply": final.text, "trace_id": trace_id})
            response: dict = {"reply": final.text, "trace_id": trace_id}
            if final.executed is not None:
                response["executed"] = {
                    "status": final.executed.status,
                    "payload": final.executed.payload,
                    "mutated": final.executed.mutated,
                }
            return response
        finally:
            with session.cond:
                session.in_flight = False
                session.cond.notify_all()
            session.busy.release()

    @app.get("/v1/sessions/{session_id}/events")
    def stream_events(session_id: str, request: Request):
        if (denied := check_auth(request)) is not None:
            return denied
        session = get_session(session_id)
        if session is None:
            return _error(404, "SessionNotFound", "no such session")

        with session.cond:
            if session.in_flight:
                # replay the in-flight question's stages from its first event
                cursor = next(
                    (
                        i
                        for i, event in enumerate(session.events)
                        if event["seq"] == session.question_seq
                    ),
                    len(session.events),
                )
            else:
                cursor = len(session.events)

        def generate() -> Iterator[str]:
            position = cursor
            while True:
                with session.cond:
                    if position >= len(session.events):
                        session.cond.wait(timeout=HEARTBEAT_SECONDS)
                    batch = session.events[position:]
                    position += len(batch)
                if batch:
                    for event in batch:
                        yield f"event: {event['stage']}\ndata: {json.dumps(event)}\n\n"
                else:
                    yield ": ping\n\n"

        return StreamingResponse(generate(), media_type="text/event-stream")

    @app.get("/v1/traces/{trace_id}")
    def get_trace(trace_id: str, request: Request):
        if (denied := check_auth(request)) is not None:
            return denied
        with state_lock:
            trace = traces.get(trace_id)
        if trace is None:
            return _error(404, "NotFound", "no such trace")
        return trace_to_dict(trace, debug)

    @app.get("/v1/tools")
    def tools(request: Request):
        if (denied := check_auth(request)) is not None:
            return denied
        return [r for r in catalog_export_records(runtime.registry) if r["exposed"]]

    if static_dir is not None and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/console", StaticFiles(directory=str(static_dir), html=True), name="console")

    return app
