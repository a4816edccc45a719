/** Console state and its reducer.
 *
 * The server snapshot is the single source of truth for queue, belief, and
 * score; the reducer merges snapshots last-write-wins and never computes
 * those numbers locally. Task-local rendering state lives beside it.
 */

import type { NextResponse, Recommendation, ServerEvent, Snapshot, SubmitResponse } from "./types.js";

export type Phase = "idle" | "waiting" | "deciding" | "running" | "submitting" | "done";

export interface ConsoleState {
  snapshot: Snapshot | null;
  phase: Phase;
  connection: "connecting" | "open" | "closed" | "error";
  currentTaskId: string | null;
  recommendation: Recommendation | null;
  lastReward: number | null;
  arrivalsSeen: number;
  eventsSeen: number;
  statusLine: string;
}

export type ConsoleEvent =
  | { kind: "snapshot"; snapshot: Snapshot }
  | { kind: "next"; response: NextResponse }
  | { kind: "submit"; response: SubmitResponse }
  | { kind: "phase"; phase: Phase }
  | { kind: "connection"; status: ConsoleState["connection"] }
  | { kind: "server_event"; event: ServerEvent }
  | { kind: "status"; text: string };

export function initialState(): ConsoleState {
  return {
    snapshot: null,
    phase: "idle",
    connection: "connecting",
    currentTaskId: null,
    recommendation: null,
    lastReward: null,
    arrivalsSeen: 0,
    eventsSeen: 0,
    statusLine: "",
  };
}

export function reduce(state: ConsoleState, event: ConsoleEvent): ConsoleState {
  switch (event.kind) {
    case "snapshot":
      return {
        ...state,
        snapshot: event.snapshot,
        recommendation: event.snapshot.recommendation,
        phase: event.snapshot.done ? "done" : state.phase,
      };
    case "next": {
      const r = event.response;
      const snapshot = state.snapshot
        ? { ...state.snapshot, q: r.q, b_h: r.b_h }
        : state.snapshot;
      if (r.wait) {
        return {
          ...state,
          snapshot,
          phase: "waiting",
          currentTaskId: null,
          recommendation: "wait",
          arrivalsSeen: state.arrivalsSeen + (r.arrivals ?? 0),
        };
      }
      return {
        ...state,
        snapshot,
        phase: "deciding",
        currentTaskId: r.descriptor ? r.descriptor.task_id : null,
        recommendation: r.recommendation,
      };
    }
    case "submit": {
      const r = event.response;
      const snapshot = state.snapshot
        ? {
            ...state.snapshot,
            q: r.q,
            b_h: r.b_h,
            score: r.score,
            task_count: r.task_count,
            done: r.done,
          }
        : state.snapshot;
      return {
        ...state,
        snapshot,
        phase: r.done ? "done" : "idle",
        currentTaskId: null,
        lastReward: r.reward,
      };
    }
    case "phase":
      return { ...state, phase: event.phase };
    case "connection":
      return { ...state, connection: event.status };
    case "server_event":
      return { ...state, eventsSeen: state.eventsSeen + 1 };
    case "status":
      return { ...state, statusLine: event.text };
  }
}
