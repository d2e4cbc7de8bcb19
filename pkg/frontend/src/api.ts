// Typed client for the chat service. Every request goes through
// assertAllowed, so the console can only ever reach the documented
// endpoints; the allowlist test depends on this being the single
// network chokepoint (no fetch/EventSource anywhere else).

import type { MessageResponse, SessionInfo, ToolRecord, Trace } from "./types.js";

export const ALLOWED_ENDPOINTS: RegExp[] = [
  /^\/v1\/sessions$/,
  /^\/v1\/sessions\/[^/]+\/messages$/,
  /^\/v1\/sessions\/[^/]+\/events$/,
  /^\/v1\/traces\/[^/]+$/,
  /^\/v1\/tools$/,
  /^\/v1\/health$/,
];

export class ApiError extends Error {
  code: string;
  status: number;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.code = code;
    this.status = status;
  }
}

export function assertAllowed(path: string): string {
  if (!ALLOWED_ENDPOINTS.some((pattern) => pattern.test(path))) {
    throw new Error(`endpoint not allowlisted: ${path}`);
  }
  return path;
}

async function request<T>(method: string, path: string, body?: unknown): Promise<T> {
  const response = await fetch(assertAllowed(path), {
    method,
    headers: body === undefined ? {} : { "Content-Type": "application/json" },
    body: body === undefined ? undefined : JSON.stringify(body),
  });
  const parsed = await response.json();
  if (!response.ok) {
    throw new ApiError(
      response.status,
      (parsed && parsed.code) || "Error",
      (parsed && parsed.message) || response.statusText,
    );
  }
  return parsed as T;
}

export const api = {
  health(): Promise<{ status: string }> {
    return request("GET", "/v1/health");
  },
  createSession(nickname: string, sessionId?: string): Promise<SessionInfo> {
    const body: Record<string, string> = { nickname };
    if (sessionId) body.session_id = sessionId;
    return request("POST", "/v1/sessions", body);
  },
  postMessage(sessionId: string, query: string): Promise<MessageResponse> {
    return request("POST", `/v1/sessions/${sessionId}/messages`, { query });
  },
  getTrace(traceId: string): Promise<Trace> {
    return request("GET", `/v1/traces/${traceId}`);
  },
  getTools(): Promise<ToolRecord[]> {
    return request("GET", "/v1/tools");
  },
  eventsUrl(sessionId: string): string {
    return assertAllowed(`/v1/sessions/${sessionId}/events`);
  },
};
