/** Wire types for the session service (schema_version 1). */

export type ActionLabel = "N" | "H" | "D";
export type Recommendation = ActionLabel | "wait" | "done";

export interface Snapshot {
  schema_version: number;
  session_id: string;
  mode: "enforced" | "advisory";
  q: number;
  b_h: number;
  score: number;
  task_count: number;
  task_budget: number;
  clock_ms: number;
  history_length: number;
  done: boolean;
  recommendation: Recommendation;
  grid_step: number;
  max_queue_length: number;
  action_set: ActionLabel[];
}

export interface TaskDescriptor {
  task_id: string;
  durations_s: { N: number; H: number };
  cue_onset_frac: number;
  target_count: number;
  stream_seed: number;
}

export interface NextResponse {
  schema_version: number;
  wait: boolean;
  descriptor: TaskDescriptor | null;
  recommendation: Recommendation | null;
  q: number;
  b_h: number;
  epoch_s?: number;
  arrivals?: number;
  expected_next_arrival_s?: number;
}

export interface SubmitResponse {
  schema_version: number;
  task_id: string;
  action: ActionLabel;
  reward: number;
  q: number;
  b_h: number;
  score: number;
  task_count: number;
  done: boolean;
}

export interface ObservationTriple {
  o1: number;
  o2: number;
  o3: number;
}

export interface ServerEvent {
  seq: number;
  type: string;
  t_ms: number;
  data: Record<string, unknown>;
}
