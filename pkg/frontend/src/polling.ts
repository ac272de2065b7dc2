/** Job polling with stale-poll cancellation: a session keeps at most one
 * mesh job in flight, and starting a new poll invalidates callbacks from
 * older ones. */

import type { Job } from './types';

export interface JobReader {
  getJob(jobId: string): Promise<Job>;
}

export interface PollHandle {
  promise: Promise<Job>;
  cancel: () => void;
}

export function pollJob(
  api: JobReader,
  jobId: string,
  intervalMs = 250,
  sleep: (ms: number) => Promise<void> = (ms) => new Promise((r) => setTimeout(r, ms)),
): PollHandle {
  let cancelled = false;
  const promise = (async (): Promise<Job> => {
    for (;;) {
      const job = await api.getJob(jobId);
      if (cancelled) {
        throw new PollCancelled(jobId);
      }
      if (job.state === 'done') {
        return job;
      }
      if (job.state === 'failed') {
        throw new Error(job.error ?? `job ${jobId} failed`);
      }
      await sleep(intervalMs);
      if (cancelled) {
        throw new PollCancelled(jobId);
      }
    }
  })();
  return { promise, cancel: () => { cancelled = true; } };
}

export class PollCancelled extends Error {
  constructor(jobId: string) {
    super(`poll for job ${jobId} cancelled`);
  }
}

/** Serializes mesh polling: starting a new job cancels the previous poll. */
export class LatestJobTracker {
  private current: PollHandle | null = null;

  track(handle: PollHandle): Promise<Job> {
    if (this.current) {
      this.current.cancel();
    }
    this.current = handle;
    return handle.promise;
  }

  get inFlight(): boolean {
    return this.current !== null;
  }

  settle(): void {
    this.current = null;
  }
}
