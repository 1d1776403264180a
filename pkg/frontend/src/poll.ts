/** Poll a plan job until it reaches a terminal state. */

import type { ApiClient } from "./api.js";
import type { JobStatusBody } from "./types.js";

export interface PollOptions {
  intervalMs?: number;
  timeoutMs?: number;
  sleep?: (ms: number) => Promise<void>;
  onUpdate?: (body: JobStatusBody) => void;
}

const realSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export async function pollJob(
  api: ApiClient,
  jobId: string,
  options: PollOptions = {},
): Promise<JobStatusBody> {
  const interval = options.intervalMs ?? 500;
  const timeout = options.timeoutMs ?? 10 * 60 * 1000;
  const sleep = options.sleep ?? realSleep;
  const deadline = Date.now() + timeout;
  for (;;) {
    const body = await api.getPlan(jobId);
    options.onUpdate?.(body);
    if (body.status === "done" || body.status === "failed") return body;
    if (Date.now() > deadline) {
      throw new Error(`job ${jobId} still ${body.status} after ${timeout} ms`);
    }
    await sleep(interval);
  }
}
