#!/usr/bin/env python3
"""Record a scripted service run for the browser console's tests.

Replays five fixture questions (four gold, one engineered to exhaust
every verification attempt) through the pipeline, capturing the exact
stage events and redacted traces the service would stream. The console's
test suite renders these offline, so the frontend builds and tests
without a running backend.
"""

from __future__ import annotations

import json
from pathlib import Path

from chops.evalharness import build_runtime, load_config, load_dataset, make_engine
from chops.gateway import Gateway, ScriptEntry, ScriptedProvider
from chops.service import trace_to_dict

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
OUT = ROOT / "frontend" / "test" / "fixtures" / "console_run.json"

GOLD_IDS = ["q-001", "q-013", "q-017", "q-023"]

FALLBACK_QUERY = "Why was my account moved to another school without notice?"


def fallback_entries() -> list[ScriptEntry]:
    entries = []
    for i in range(5):
        entries.append(ScriptEntry("Classifier1", "", "NO"))
        entries.append(ScriptEntry("Classifier2", "", "1"))
        entries.append(ScriptEntry("Executor", "", f"speculative answer {i + 1}"))
        entries.append(ScriptEntry("Verifier", "", f"SCORE: 2\nREASON: not grounded, try {i + 1}"))
    entries.append(ScriptEntry("Summarizer", "", "CHOOSE 1"))
    return entries


def main() -> int:
    config = load_config(FIXTURES / "config.json")
    runtime = build_runtime(config)
    dataset = {item.id: item for item in load_dataset(FIXTURES / "dataset.jsonl", runtime.store)}

    questions = []
    for item_id in GOLD_IDS:
        item = dataset[item_id]
        provider = ScriptedProvider.from_file(item.transcript)
        questions.append((item.nickname, item.query, provider, item_id))
    questions.append(
        ("alice_tl", FALLBACK_QUERY, ScriptedProvider(fallback_entries()), "demo-fallback")
    )

    recorded = []
    for nickname, query, provider, label in questions:
        gateway = Gateway(runtime.bindings, provider, runtime.pricing)
        engine = make_engine(runtime, gateway)
        events: list[dict] = []
        final, trace = engine.run(
            nickname,
            query,
            on_event=lambda stage, payload: events.append({"stage": stage, "payload": payload}),
            question_label=label,
        )
        executed = None
        if final.executed is not None:
            executed = {
                "status": final.executed.status,
                "payload": final.executed.payload,
                "mutated": final.executed.mutated,
            }
        recorded.append(
            {
                "id": label,
                "nickname": nickname,
                "query": query,
                "reply": final.text,
                "executed": executed,
                "events": events,
                "trace": trace_to_dict(trace, debug=False),
            }
        )

    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(recorded, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    print(f"recorded {len(recorded)} question runs -> {OUT.relative_to(ROOT)}")
    for record in recorded:
        print(
            f"  {record['id']}: {len(record['trace']['records'])} iteration(s), "
            f"fallback={record['trace']['fallback_used']}"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
