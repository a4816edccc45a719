/** Browser shell: rendering and input wiring around the session controller. */

import { TaskEngine, buildSchedule } from "./task_engine.js";
import type { ConsoleState } from "./reducer.js";
import type { ActionLabel, ObservationTriple, Recommendation, TaskDescriptor } from "./types.js";

export interface Elements {
  queueFill: HTMLElement;
  queueLabel: HTMLElement;
  beliefFill: HTMLElement;
  beliefLabel: HTMLElement;
  score: HTMLElement;
  taskCount: HTMLElement;
  recommendation: HTMLElement;
  symbol: HTMLElement;
  cueLight: HTMLElement;
  progressFill: HTMLElement;
  status: HTMLElement;
  lastReward: HTMLElement;
  decision: HTMLElement;
  decisionButtons: Record<ActionLabel, HTMLButtonElement>;
}

export function grabElements(doc: Document): Elements {
  const get = (id: string) => {
    const el = doc.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el as HTMLElement;
  };
  return {
    queueFill: get("queue-fill"),
    queueLabel: get("queue-label"),
    beliefFill: get("belief-fill"),
    beliefLabel: get("belief-label"),
    score: get("score"),
    taskCount: get("task-count"),
    recommendation: get("recommendation"),
    symbol: get("symbol"),
    cueLight: get("cue-light"),
    progressFill: get("progress-fill"),
    status: get("status"),
    lastReward: get("last-reward"),
    decision: get("decision"),
    decisionButtons: {
      N: get("choose-n") as HTMLButtonElement,
      H: get("choose-h") as HTMLButtonElement,
      D: get("choose-d") as HTMLButtonElement,
    },
  };
}

const REC_TEXT: Record<string, string> = {
  N: "normal fidelity",
  H: "HIGH fidelity",
  D: "delegate to autonomy",
  wait: "waiting for arrivals",
  done: "session complete",
};

export function render(els: Elements, state: ConsoleState): void {
  const snap = state.snapshot;
  if (snap) {
    const frac = snap.max_queue_length > 0 ? snap.q / snap.max_queue_length : 0;
    els.queueFill.style.width = `${Math.min(100, frac * 100)}%`;
    els.queueLabel.textContent = `${snap.q} / ${snap.max_queue_length}`;
    els.beliefFill.style.width = `${snap.b_h * 100}%`;
    els.beliefLabel.textContent = snap.b_h.toFixed(1);
    els.score.textContent = snap.score.toFixed(1);
    els.taskCount.textContent = `${snap.task_count} / ${snap.task_budget}`;
  }
  const rec = state.recommendation ?? "wait";
  els.recommendation.textContent = REC_TEXT[rec] ?? rec;
  els.recommendation.dataset.action = rec;
  els.lastReward.textContent = state.lastReward === null ? "-" : state.lastReward.toFixed(1);
  els.status.textContent = state.statusLine || state.phase;
  els.decision.style.display = state.phase === "deciding" ? "flex" : "none";
}

const DISTRACTORS = ["◇", "○", "△", "▽", "☆"];
const TARGET_GLYPH = "◆";

/** Play a task in the page; resolves with the tallied observation. */
export function playTaskInDom(
  els: Elements,
  descriptor: TaskDescriptor,
  fidelity: "N" | "H",
  doc: Document,
): Promise<ObservationTriple> {
  const schedule = buildSchedule(descriptor, fidelity);
  const engine = new TaskEngine(schedule);
  const t0 = performance.now();

  return new Promise((resolve) => {
    const keyHandler = (ev: KeyboardEvent) => {
      if (ev.code === "Space") {
        ev.preventDefault();
        engine.pressDetect(performance.now() - t0);
      } else if (ev.code === "Enter") {
        ev.preventDefault();
        engine.pressCue(performance.now() - t0);
      }
    };
    const visibilityHandler = () => {
      if (doc.hidden) engine.pause(performance.now() - t0);
      else engine.resume(performance.now() - t0);
    };
    doc.addEventListener("keydown", keyHandler);
    doc.addEventListener("visibilitychange", visibilityHandler);

    let cueAnswered = false;
    const frame = () => {
      const now = performance.now() - t0;
      const t = engine.taskTime(now);
      if (t >= schedule.durationMs) {
        doc.removeEventListener("keydown", keyHandler);
        doc.removeEventListener("visibilitychange", visibilityHandler);
        els.symbol.textContent = "·";
        els.cueLight.className = "cue off";
        els.progressFill.style.width = "0%";
        const tally = engine.tally();
        resolve({ o1: tally.o1, o2: tally.o2, o3: tally.o3 });
        return;
      }
      const slot = engine.slotAt(t);
      if (slot) {
        const rotor = DISTRACTORS[slot.index % DISTRACTORS.length];
        els.symbol.textContent = slot.isTarget ? TARGET_GLYPH : rotor;
        els.symbol.className = slot.isTarget ? "symbol target" : "symbol";
      }
      if (!cueAnswered && engine.keyLog.some(
        (e) => e.key === "cue" && e.tMs >= schedule.cueOnsetMs)) {
        cueAnswered = true;
      }
      const cueOn = t >= schedule.cueOnsetMs && !cueAnswered;
      els.cueLight.className = cueOn ? "cue red" : "cue green";
      els.progressFill.style.width = `${(t / schedule.durationMs) * 100}%`;
      requestAnimationFrame(frame);
    };
    requestAnimationFrame(frame);
  });
}

export function decideInDom(els: Elements, recommendation: Recommendation,
                            actions: ActionLabel[]): Promise<ActionLabel> {
  els.decision.style.display = "flex";
  for (const label of ["N", "H", "D"] as ActionLabel[]) {
    els.decisionButtons[label].style.display = actions.includes(label) ? "inline-block" : "none";
    els.decisionButtons[label].classList.toggle("recommended", label === recommendation);
  }
  return new Promise((resolve) => {
    const pick = (label: ActionLabel) => () => {
      for (const l of ["N", "H", "D"] as ActionLabel[]) {
        els.decisionButtons[l].onclick = null;
      }
      els.decision.style.display = "none";
      resolve(label);
    };
    for (const label of ["N", "H", "D"] as ActionLabel[]) {
      els.decisionButtons[label].onclick = pick(label);
    }
  });
}
