// HTML renderers: pure string builders so they are testable without a DOM.

import type { ConsoleState, StageRow } from "./state.js";
import type { Trace } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

export function renderStageStrip(strip: StageRow[], fallback: boolean): string {
  const rows = strip.map((row) => {
    const chips = row.chips
      .map(
        (chip) =>
          `<span class="chip chip-${chip.stage.toLowerCase()}">` +
          `${chip.stage}${chip.detail ? ` <em>${escapeHtml(chip.detail)}</em>` : ""}</span>`,
      )
      .join("");
    return `<div class="strip-row" data-iteration="${row.iteration}">` +
      `<span class="iter">#${row.iteration}</span>${chips}</div>`;
  });
  const badge = fallback ? '<div class="badge badge-fallback">Fallback</div>' : "";
  return rows.join("") + badge;
}

export function renderMessages(state: ConsoleState): string {
  return state.messages
    .map((message) => {
      const badges: string[] = [];
      if (message.executedTool) {
        badges.push(
          `<span class="badge badge-executed">action executed: ${escapeHtml(message.executedTool)}</span>`,
        );
      }
      if (message.fallback) {
        badges.push('<span class="badge badge-fallback">Fallback</span>');
      }
      const trace = message.traceId
        ? `<a href="#" class="trace-link" data-trace="${message.traceId}">trace</a>`
        : "";
      return (
        `<div class="msg msg-${message.role}">` +
        `<div class="msg-text">${escapeHtml(message.text)}</div>` +
        `${badges.join("")}${trace}</div>`
      );
    })
    .join("");
}

export function renderCostTicker(state: ConsoleState): string {
  return `chars in ${state.costIn.toLocaleString()} / out ${state.costOut.toLocaleString()}`;
}

export function renderTraceTable(trace: Trace): string {
  const rows = trace.records
    .map((record) => {
      const score =
        record.verdict === null
          ? "-"
          : `${record.verdict.score} vs ${record.threshold ?? "-"}`;
      return (
        `<tr><td>${record.index}</td><td>${record.class ?? "-"}</td>` +
        `<td>${record.outcome.kind}</td><td>${score}</td></tr>`
      );
    })
    .join("");
  return (
    `<table class="trace-table" data-trace="${trace.trace_id}">` +
    "<thead><tr><th>iteration</th><th>class</th><th>outcome</th><th>score vs threshold</th></tr></thead>" +
    `<tbody>${rows}</tbody></table>`
  );
}
