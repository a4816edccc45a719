/** Thin HTTP client over the session endpoints. */

import type {
  ActionLabel,
  NextResponse,
  ObservationTriple,
  ServerEvent,
  Snapshot,
  SubmitResponse,
} from "./types.js";

export interface SessionApi {
  createSession(body: {
    seed?: number;
    mode?: string;
    initial_queue?: number;
    task_budget?: number;
  }): Promise<Snapshot>;
  getState(sessionId: string): Promise<Snapshot>;
  nextTask(sessionId: string): Promise<NextResponse>;
  submitResult(
    sessionId: string,
    taskId: string,
    action: ActionLabel,
    observation: ObservationTriple | null,
  ): Promise<SubmitResponse>;
  subscribe(sessionId: string, onEvent: (ev: ServerEvent) => void): () => void;
}

export class HttpSessionApi implements SessionApi {
  constructor(private readonly baseUrl: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(this.baseUrl + path, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    if (!resp.ok) {
      const detail = await resp.text();
      throw new Error(`${init?.method ?? "GET"} ${path} -> ${resp.status}: ${detail}`);
    }
    return (await resp.json()) as T;
  }

  createSession(body: {
    seed?: number;
    mode?: string;
    initial_queue?: number;
    task_budget?: number;
  }): Promise<Snapshot> {
    return this.request("/sessions", { method: "POST", body: JSON.stringify(body) });
  }

  getState(sessionId: string): Promise<Snapshot> {
    return this.request(`/sessions/${sessionId}`);
  }

  nextTask(sessionId: string): Promise<NextResponse> {
    return this.request(`/sessions/${sessionId}/next`, { method: "POST", body: "{}" });
  }

  submitResult(
    sessionId: string,
    taskId: string,
    action: ActionLabel,
    observation: ObservationTriple | null,
  ): Promise<SubmitResponse> {
    return this.request(`/sessions/${sessionId}/result`, {
      method: "POST",
      body: JSON.stringify({ task_id: taskId, action, observation }),
    });
  }

  subscribe(sessionId: string, onEvent: (ev: ServerEvent) => void): () => void {
    const source = new EventSource(`${this.baseUrl}/sessions/${sessionId}/events`);
    const handler = (msg: MessageEvent) => {
      try {
        onEvent(JSON.parse(msg.data) as ServerEvent);
      } catch {
        /* malformed event payloads are dropped */
      }
    };
    for (const type of ["session_created", "task_issued", "arrivals", "recommendation",
                        "session_done"]) {
      source.addEventListener(type, handler as EventListener);
    }
    source.onmessage = handler;
    return () => source.close();
  }
}
