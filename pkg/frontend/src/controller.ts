/** Session flow: create, then loop next -> decide -> play -> submit.
 *
 * The controller owns no authoritative numbers: after every round trip it
 * re-reads the server snapshot and dispatches it into the reducer. Decision
 * and playback are injected hooks so the same loop runs headless under test
 * and interactively in the browser.
 */

import type { SessionApi } from "./api.js";
import type { ConsoleEvent } from "./reducer.js";
import type {
  ActionLabel,
  NextResponse,
  ObservationTriple,
  Recommendation,
  Snapshot,
  TaskDescriptor,
} from "./types.js";

export interface ControllerHooks {
  /** Pick the action for an issued task. In enforced mode this is never
   * consulted: the recommendation is submitted as-is. */
  decide(recommendation: Recommendation, snapshotQ: number, snapshotB: number):
    Promise<ActionLabel>;
  /** Play the task at the chosen fidelity and return the tallied triple. */
  playTask(descriptor: TaskDescriptor, fidelity: "N" | "H"): Promise<ObservationTriple>;
  /** Called while the queue is empty; resolve to keep polling. */
  onWait?(response: NextResponse): Promise<void>;
}

export interface ControllerOptions {
  seed?: number;
  mode?: "enforced" | "advisory";
  taskBudget?: number;
  initialQueue?: number;
  verifySnapshots?: boolean;
  maxWaits?: number;
}

export interface SubmittedTask {
  taskId: string;
  action: ActionLabel;
  recommendation: Recommendation | null;
  observation: ObservationTriple | null;
  reward: number;
}

export class SessionController {
  readonly submitted: SubmittedTask[] = [];
  private sessionId: string | null = null;

  constructor(
    private readonly api: SessionApi,
    private readonly hooks: ControllerHooks,
    private readonly dispatch: (ev: ConsoleEvent) => void,
    private readonly options: ControllerOptions = {},
  ) {}

  get id(): string | null {
    return this.sessionId;
  }

  async run(): Promise<Snapshot> {
    const created = await this.api.createSession({
      seed: this.options.seed,
      mode: this.options.mode,
      task_budget: this.options.taskBudget,
      initial_queue: this.options.initialQueue,
    });
    this.sessionId = created.session_id;
    this.dispatch({ kind: "snapshot", snapshot: created });
    let waits = 0;
    const maxWaits = this.options.maxWaits ?? Number.POSITIVE_INFINITY;

    while (true) {
      const next = await this.api.nextTask(this.sessionId);
      this.dispatch({ kind: "next", response: next });
      if (next.wait) {
        waits += 1;
        if (waits > maxWaits) throw new Error("exceeded wait budget");
        if (this.hooks.onWait) await this.hooks.onWait(next);
        continue;
      }
      const descriptor = next.descriptor as TaskDescriptor;
      const recommendation = next.recommendation;
      const enforced = (this.options.mode ?? "enforced") === "enforced";
      let action: ActionLabel;
      if (enforced) {
        action = recommendation as ActionLabel;
      } else {
        action = await this.hooks.decide(recommendation ?? "wait", next.q, next.b_h);
      }

      let observation: ObservationTriple | null = null;
      if (action !== "D") {
        this.dispatch({ kind: "phase", phase: "running" });
        observation = await this.hooks.playTask(descriptor, action);
      }
      this.dispatch({ kind: "phase", phase: "submitting" });
      const result = await this.api.submitResult(
        this.sessionId, descriptor.task_id, action, observation,
      );
      this.submitted.push({
        taskId: descriptor.task_id,
        action,
        recommendation,
        observation,
        reward: result.reward,
      });
      this.dispatch({ kind: "submit", response: result });

      if (this.options.verifySnapshots ?? true) {
        const state = await this.api.getState(this.sessionId);
        this.dispatch({ kind: "snapshot", snapshot: state });
      }
      if (result.done) {
        return await this.api.getState(this.sessionId);
      }
    }
  }
}
