export interface StageEvent {
  stage: string;
  payload: Record<string, unknown>;
}

export interface TraceVerdict {
  score: number;
  reason: string;
  valid: boolean;
}

export interface TraceRecord {
  index: number;
  class: string | null;
  context: string;
  outcome: { kind: string; text?: string; call?: string };
  verdict: TraceVerdict | null;
  threshold: number | null;
  prompts: Record<string, string>;
}

export interface ExecutedResult {
  status: string;
  payload: string;
  mutated: boolean;
}

export interface Trace {
  trace_id: string;
  strategy: string;
  fallback_used: boolean;
  usage: Record<string, { in: number; out: number }>;
  records: TraceRecord[];
  final: { text: string; executed: ExecutedResult | null } | null;
}

export interface SessionInfo {
  session_id: string;
  nickname: string;
  created_at: string;
  history: { query: string; reply: string; trace_id: string }[];
}

export interface MessageResponse {
  reply: string;
  trace_id: string;
  executed?: ExecutedResult;
}

export interface ToolRecord {
  name: string;
  category: string;
  params: { name: string; type: string }[];
  description: string;
  exposed: boolean;
  permission: string;
}
