/** Dual-task playback core, independent of the DOM.
 *
 * A task plays a fixed number of symbol slots over the chosen fidelity's
 * duration (normal fidelity runs the same slots three times faster). Some
 * slots carry targets; the operator presses the detect key on targets and
 * the cue key when the light turns red. The engine is driven by explicit
 * timestamps from a monotonic clock, so headless harnesses can script it.
 */

import { mulberry32, sampleIndices } from "./prng.js";
import type { ActionLabel, ObservationTriple, TaskDescriptor } from "./types.js";

export const SLOTS_PER_TASK = 24;

export interface SlotSchedule {
  index: number;
  isTarget: boolean;
  startMs: number;
  endMs: number;
}

export interface TaskSchedule {
  durationMs: number;
  cueOnsetMs: number;
  cueWindowMs: number;
  slots: SlotSchedule[];
}

export interface KeyEventLog {
  key: "detect" | "cue";
  tMs: number;
}

export interface TallyResult extends ObservationTriple {
  hits: number;
  targets: number;
  falsePresses: number;
  cueMissed: boolean;
  paused: boolean;
}

export function buildSchedule(
  descriptor: TaskDescriptor,
  fidelity: Exclude<ActionLabel, "D">,
): TaskSchedule {
  const durationMs = descriptor.durations_s[fidelity] * 1000;
  const rand = mulberry32(descriptor.stream_seed);
  const targetSlots = new Set(
    sampleIndices(SLOTS_PER_TASK, descriptor.target_count, rand),
  );
  const slotMs = durationMs / SLOTS_PER_TASK;
  const slots: SlotSchedule[] = [];
  for (let i = 0; i < SLOTS_PER_TASK; i++) {
    slots.push({
      index: i,
      isTarget: targetSlots.has(i),
      startMs: i * slotMs,
      endMs: (i + 1) * slotMs,
    });
  }
  const cueOnsetMs = descriptor.cue_onset_frac * durationMs;
  return { durationMs, cueOnsetMs, cueWindowMs: durationMs - cueOnsetMs, slots };
}

/** Collects raw keypresses against a schedule and tallies the observation.
 *
 * Time is task-relative and supplied by the caller; pausing shifts the
 * remaining schedule so a hidden tab cannot shorten the stream.
 */
export class TaskEngine {
  readonly schedule: TaskSchedule;
  readonly keyLog: KeyEventLog[] = [];
  private pausedAtMs: number | null = null;
  private pausedTotalMs = 0;
  private wasPaused = false;

  constructor(schedule: TaskSchedule) {
    this.schedule = schedule;
  }

  /** Task-relative time with pauses removed. */
  taskTime(tMs: number): number {
    return tMs - this.pausedTotalMs;
  }

  pause(tMs: number): void {
    if (this.pausedAtMs === null) {
      this.pausedAtMs = tMs;
      this.wasPaused = true;
    }
  }

  resume(tMs: number): void {
    if (this.pausedAtMs !== null) {
      this.pausedTotalMs += tMs - this.pausedAtMs;
      this.pausedAtMs = null;
    }
  }

  get paused(): boolean {
    return this.pausedAtMs !== null;
  }

  get done(): boolean {
    return false;
  }

  pressDetect(tMs: number): void {
    if (this.pausedAtMs !== null) return;
    this.keyLog.push({ key: "detect", tMs: this.taskTime(tMs) });
  }

  pressCue(tMs: number): void {
    if (this.pausedAtMs !== null) return;
    this.keyLog.push({ key: "cue", tMs: this.taskTime(tMs) });
  }

  slotAt(taskMs: number): SlotSchedule | null {
    const { slots, durationMs } = this.schedule;
    if (taskMs < 0 || taskMs >= durationMs) return null;
    const idx = Math.floor((taskMs / durationMs) * slots.length);
    return slots[Math.min(idx, slots.length - 1)];
  }

  /** Final observation triple plus its components.
   *
   * o1: distinct target slots with at least one detect press during the slot,
   *     divided by the target count.
   * o2: detect presses landing in non-target slots (or off the stream).
   * o3: first cue press at or after cue onset, as latency in ms; if the cue
   *     is never answered it is censored to the full remaining window.
   */
  tally(): TallyResult {
    const targets = this.schedule.slots.filter((s) => s.isTarget).length;
    const hitSlots = new Set<number>();
    let falsePresses = 0;
    let reaction: number | null = null;
    for (const ev of this.keyLog) {
      if (ev.tMs < 0 || ev.tMs >= this.schedule.durationMs) continue;
      if (ev.key === "detect") {
        const slot = this.slotAt(ev.tMs);
        if (slot !== null && slot.isTarget) {
          hitSlots.add(slot.index);
        } else {
          falsePresses += 1;
        }
      } else if (ev.key === "cue" && reaction === null && ev.tMs >= this.schedule.cueOnsetMs) {
        reaction = ev.tMs - this.schedule.cueOnsetMs;
      }
    }
    const cueMissed = reaction === null;
    const o3 = cueMissed ? this.schedule.cueWindowMs : (reaction as number);
    return {
      o1: targets === 0 ? 1.0 : hitSlots.size / targets,
      o2: falsePresses,
      o3,
      hits: hitSlots.size,
      targets,
      falsePresses,
      cueMissed,
      paused: this.wasPaused,
    };
  }
}
