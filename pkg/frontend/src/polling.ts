/** Job polling with slow-down.
 *
 * One-second cadence while a job is fresh; once 30 s have gone by the gap
 * doubles on every poll and settles at 10 s so a long queue does not hammer
 * the service.
 */

import type { Job } from "./types.js";

export const POLL_INTERVAL_MS = 1000;
export const POLL_MAX_INTERVAL_MS = 10000;
export const POLL_BACKOFF_AFTER_MS = 30000;

export function isTerminal(job: Job): boolean {
  return job.status === "Done" || job.status === "Failed";
}

export interface Timers {
  set: (fn: () => void, ms: number) => unknown;
  clear: (handle: unknown) => void;
  now: () => number;
}

const realTimers: Timers = {
  set: (fn, ms) => setTimeout(fn, ms),
  clear: (handle) => clearTimeout(handle as Parameters<typeof clearTimeout>[0]),
  now: () => Date.now(),
};

export interface PollHandle {
  done: Promise<Job>;
  cancel: () => void;
}

/** Compute the next poll gap from time elapsed since the poll started. */
export function nextInterval(current: number, elapsedMs: number): number {
  if (elapsedMs < POLL_BACKOFF_AFTER_MS) return POLL_INTERVAL_MS;
  return Math.min(current * 2, POLL_MAX_INTERVAL_MS);
}

export function pollJob(
  fetchJob: () => Promise<Job>,
  onUpdate: (job: Job) => void,
  timers: Timers = realTimers,
): PollHandle {
  let cancelled = false;
  let handle: unknown = null;
  let interval = POLL_INTERVAL_MS;
  const started = timers.now();

  const done = new Promise<Job>((resolve, reject) => {
    const tick = async () => {
      let job: Job;
      try {
        job = await fetchJob();
      } catch (err) {
        if (!cancelled) reject(err);
        return;
      }
      if (cancelled) return;
      onUpdate(job);
      if (isTerminal(job)) {
        resolve(job);
        return;
      }
      interval = nextInterval(interval, timers.now() - started);
      handle = timers.set(tick, interval);
    };
    handle = timers.set(tick, interval);
  });

  return {
    done,
    cancel: () => {
      cancelled = true;
      if (handle !== null) timers.clear(handle);
    },
  };
}
