// Replays the recorded scripted service run (five fixture questions)
// through the reducer, exactly as the live event stream would drive it.

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { describe, expect, it } from "vitest";

import { executedToolName, initialState, reduce, type ConsoleState } from "../src/state.js";
import { renderMessages, renderStageStrip, renderTraceTable } from "../src/render.js";
import type { ExecutedResult, StageEvent, Trace } from "../src/types.js";

interface RecordedRun {
  id: string;
  nickname: string;
  query: string;
  reply: string;
  executed: ExecutedResult | null;
  events: StageEvent[];
  trace: Trace;
}

const FIXTURE = join(dirname(fileURLToPath(import.meta.url)), "fixtures", "console_run.json");
const RUNS: RecordedRun[] = JSON.parse(readFileSync(FIXTURE, "utf-8"));

function replay(run: RecordedRun): ConsoleState {
  let state = reduce(
    { ...initialState, sessionId: "s", nickname: run.nickname },
    { type: "send", query: run.query },
  );
  for (const event of run.events) {
    state = reduce(state, { type: "event", event });
  }
  state = reduce(state, {
    type: "reply",
    text: run.reply,
    traceId: run.trace.trace_id,
    executedTool: executedToolName(run.trace) ?? undefined,
    fallback: run.trace.fallback_used,
  });
  return reduce(state, { type: "trace", trace: run.trace });
}

describe("recorded scripted service run", () => {
  it("covers five questions with exactly one all-invalid case", () => {
    expect(RUNS).toHaveLength(5);
    expect(RUNS.filter((run) => run.trace.fallback_used)).toHaveLength(1);
  });

  for (const run of RUNS) {
    it(`${run.id}: stage strip row count equals trace iteration count`, () => {
      const state = replay(run);
      expect(state.strip).toHaveLength(run.trace.records.length);
      const html = renderStageStrip(state.strip, state.fallback);
      expect(html.match(/strip-row/g)).toHaveLength(run.trace.records.length);
    });

    it(`${run.id}: fallback badge appears iff the run fell back`, () => {
      const state = replay(run);
      expect(state.fallback).toBe(run.trace.fallback_used);
      const html = renderStageStrip(state.strip, state.fallback);
      expect(html.includes("badge-fallback")).toBe(run.trace.fallback_used);
    });

    it(`${run.id}: done event carries the final reply text`, () => {
      const done = run.events.find((event) => event.stage === "Done");
      expect(done).toBeDefined();
      expect(done!.payload["reply"]).toBe(run.reply);
      expect(run.events[run.events.length - 1].stage).toBe("Done");
    });

    it(`${run.id}: trace inspector renders one row per iteration, no prompts`, () => {
      const html = renderTraceTable(run.trace);
      expect(html.match(/<tr><td>/g)).toHaveLength(run.trace.records.length);
      expect(html).not.toContain("sha256:");
      for (const record of run.trace.records) {
        for (const prompt of Object.values(record.prompts)) {
          expect(prompt).toMatch(/^sha256:/); // service redacts; console never shows them
        }
      }
    });
  }

  it("q-017 shows the executed-tool badge with the tool name", () => {
    const run = RUNS.find((candidate) => candidate.id === "q-017")!;
    const state = replay(run);
    expect(run.executed?.status).toBe("Ok");
    const html = renderMessages(state);
    expect(html).toContain("action executed: ChangeAllTypesUploadLimit");
  });

  it("the fallback case shows no executed badge and keeps the store untouched", () => {
    const run = RUNS.find((candidate) => candidate.trace.fallback_used)!;
    expect(run.executed).toBeNull();
    const state = replay(run);
    const html = renderMessages(state);
    expect(html).not.toContain("badge-executed");
    expect(html).toContain("badge-fallback");
  });
});
