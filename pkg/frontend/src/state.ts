// Single reducer over everything the console shows. State only ever
// holds data received from the service; no client-side reordering of
// events (the strip is built strictly in arrival order).

import type { SessionInfo, StageEvent, Trace } from "./types.js";

export interface StageChip {
  stage: string;
  detail: string;
}

export interface StageRow {
  iteration: number;
  chips: StageChip[];
}

export interface ChatMessage {
  role: "user" | "assistant";
  text: string;
  traceId?: string;
  executedTool?: string;
  fallback?: boolean;
}

export interface ConsoleState {
  sessionId: string | null;
  nickname: string | null;
  messages: ChatMessage[];
  strip: StageRow[];
  fallback: boolean;
  done: boolean;
  busy: boolean;
  error: string | null;
  lastTrace: Trace | null;
  costIn: number;
  costOut: number;
}

export const initialState: ConsoleState = {
  sessionId: null,
  nickname: null,
  messages: [],
  strip: [],
  fallback: false,
  done: false,
  busy: false,
  error: null,
  lastTrace: null,
  costIn: 0,
  costOut: 0,
};

export type Action =
  | { type: "connected"; session: SessionInfo }
  | { type: "send"; query: string }
  | { type: "event"; event: StageEvent }
  | { type: "reply"; text: string; traceId: string; executedTool?: string; fallback?: boolean }
  | { type: "trace"; trace: Trace }
  | { type: "busy" }
  | { type: "error"; message: string };

function chipDetail(event: StageEvent): string {
  const payload = event.payload;
  switch (event.stage) {
    case "Classified":
      return String(payload["class"] ?? "");
    case "Executed":
      return String(payload["outcome"] ?? "");
    case "Verified": {
      const valid = payload["valid"] ? "pass" : "fail";
      return `${payload["score"]}/${payload["threshold"]} ${valid}`;
    }
    case "Retrying":
      return String(payload["reason"] ?? "").slice(0, 60);
    default:
      return "";
  }
}

function appendStage(state: ConsoleState, event: StageEvent): ConsoleState {
  const iteration = Number(event.payload["iteration"] ?? 0);
  const chip: StageChip = { stage: event.stage, detail: chipDetail(event) };
  const strip = state.strip.map((row) => ({ ...row, chips: [...row.chips] }));
  const row = strip.find((r) => r.iteration === iteration);
  if (row) {
    row.chips.push(chip);
  } else {
    strip.push({ iteration, chips: [chip] });
  }
  return { ...state, strip };
}

export function reduce(state: ConsoleState, action: Action): ConsoleState {
  switch (action.type) {
    case "connected": {
      const messages: ChatMessage[] = [];
      for (const entry of action.session.history) {
        messages.push({ role: "user", text: entry.query });
        messages.push({ role: "assistant", text: entry.reply, traceId: entry.trace_id });
      }
      return {
        ...initialState,
        sessionId: action.session.session_id,
        nickname: action.session.nickname,
        messages,
      };
    }
    case "send":
      return {
        ...state,
        messages: [...state.messages, { role: "user", text: action.query }],
        strip: [],
        fallback: false,
        done: false,
        busy: true,
        error: null,
        costIn: 0,
        costOut: 0,
      };
    case "event": {
      const { event } = action;
      if (event.stage === "Fallback") {
        return { ...state, fallback: true };
      }
      if (event.stage === "Done") {
        return { ...state, done: true };
      }
      return appendStage(state, event);
    }
    case "reply":
      return {
        ...state,
        busy: false,
        messages: [
          ...state.messages,
          {
            role: "assistant",
            text: action.text,
            traceId: action.traceId,
            executedTool: action.executedTool,
            fallback: action.fallback,
          },
        ],
      };
    case "trace": {
      let costIn = 0;
      let costOut = 0;
      for (const usage of Object.values(action.trace.usage)) {
        costIn += usage.in;
        costOut += usage.out;
      }
      return { ...state, lastTrace: action.trace, costIn, costOut };
    }
    case "busy":
      return { ...state, busy: true, error: "a question is already in flight" };
    case "error":
      return { ...state, busy: false, error: action.message };
  }
}

// The executed-tool badge carries the tool's name; the service reply only
// has the tool result, so the name comes from the trace's final call line.
export function executedToolName(trace: Trace): string | null {
  if (!trace.final || !trace.final.executed || trace.final.executed.status !== "Ok") {
    return null;
  }
  const last = trace.records[trace.records.length - 1];
  if (!last || last.outcome.kind !== "call" || !last.outcome.call) {
    return null;
  }
  const match = /^CALL\s+(\w+)\(/.exec(last.outcome.call);
  return match ? match[1] : null;
}
