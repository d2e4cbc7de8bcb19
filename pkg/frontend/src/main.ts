// Console wiring: connect form, composer, SSE subscription, trace viewer.

import { api, ApiError } from "./api.js";
import {
  type Action,
  type ConsoleState,
  executedToolName,
  initialState,
  reduce,
} from "./state.js";
import { renderCostTicker, renderMessages, renderStageStrip, renderTraceTable } from "./render.js";

const SESSION_KEY = "chops-console-session";

let state: ConsoleState = initialState;
let events: EventSource | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function dispatch(action: Action): void {
  state = reduce(state, action);
  render();
}

function render(): void {
  el("messages").innerHTML = renderMessages(state);
  el("strip").innerHTML = renderStageStrip(state.strip, state.fallback);
  el("cost").textContent = renderCostTicker(state);
  el("error").textContent = state.error ?? "";
  el<HTMLButtonElement>("send").disabled = state.busy || state.sessionId === null;
  el<HTMLInputElement>("query").disabled = state.busy || state.sessionId === null;
  el("who").textContent = state.nickname ? `signed in as ${state.nickname}` : "";
  if (state.lastTrace) {
    el("trace-view").innerHTML = renderTraceTable(state.lastTrace);
  }
  const log = el("messages");
  log.scrollTop = log.scrollHeight;
  for (const link of Array.from(document.querySelectorAll<HTMLAnchorElement>(".trace-link"))) {
    link.onclick = (click) => {
      click.preventDefault();
      void showTrace(link.dataset.trace ?? "");
    };
  }
}

function subscribe(sessionId: string): void {
  events?.close();
  events = new EventSource(api.eventsUrl(sessionId));
  for (const stage of ["Classified", "Executed", "Verified", "Retrying", "Fallback", "Done"]) {
    events.addEventListener(stage, (raw) => {
      const parsed = JSON.parse((raw as MessageEvent).data);
      dispatch({ type: "event", event: { stage: parsed.stage, payload: parsed.payload } });
    });
  }
}

async function connect(nickname: string): Promise<void> {
  const stored = localStorage.getItem(SESSION_KEY);
  try {
    let session;
    if (stored) {
      const [storedNickname, storedId] = stored.split(":", 2);
      if (storedNickname === nickname) {
        try {
          session = await api.createSession(nickname, storedId);
        } catch {
          session = await api.createSession(nickname);
        }
      }
    }
    if (!session) {
      session = await api.createSession(nickname);
    }
    localStorage.setItem(SESSION_KEY, `${nickname}:${session.session_id}`);
    dispatch({ type: "connected", session });
    subscribe(session.session_id);
  } catch (error) {
    const message = error instanceof ApiError ? error.message : String(error);
    dispatch({ type: "error", message });
  }
}

async function showTrace(traceId: string): Promise<void> {
  try {
    dispatch({ type: "trace", trace: await api.getTrace(traceId) });
  } catch (error) {
    dispatch({ type: "error", message: String(error) });
  }
}

async function send(query: string): Promise<void> {
  if (!state.sessionId || state.busy || !query.trim()) return;
  const sessionId = state.sessionId;
  dispatch({ type: "send", query });
  try {
    const response = await api.postMessage(sessionId, query);
    const trace = await api.getTrace(response.trace_id);
    dispatch({
      type: "reply",
      text: response.reply,
      traceId: response.trace_id,
      executedTool: executedToolName(trace) ?? undefined,
      fallback: trace.fallback_used,
    });
    dispatch({ type: "trace", trace });
  } catch (error) {
    if (error instanceof ApiError && error.code === "Busy") {
      dispatch({ type: "busy" });
    } else {
      const message = error instanceof ApiError ? error.message : String(error);
      dispatch({ type: "error", message });
    }
  }
}

function main(): void {
  el<HTMLFormElement>("connect-form").onsubmit = (submit) => {
    submit.preventDefault();
    void connect(el<HTMLInputElement>("nickname").value.trim());
  };
  el<HTMLFormElement>("composer").onsubmit = (submit) => {
    submit.preventDefault();
    const input = el<HTMLInputElement>("query");
    void send(input.value);
    input.value = "";
  };
  render();
}

main();
