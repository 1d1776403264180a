/** Side-by-side method comparison: one job panel per selected method, each
 * with its own polling loop and playback cursor. */

import type { ApiClient } from "./api.js";
import { pollJob, type PollOptions } from "./poll.js";
import { PlaybackController } from "./playback.js";
import type { JobStatusBody, PlanRequest } from "./types.js";
import type { WorkbenchState } from "./state.js";

export type PanelPhase = "submitting" | "queued" | "running" | "done" | "failed";

export class JobPanel {
  phase: PanelPhase = "submitting";
  jobId: string | null = null;
  body: JobStatusBody | null = null;
  playback: PlaybackController | null = null;
  errorText: string | null = null;

  constructor(public method: string, public request: PlanRequest) {}

  applyUpdate(body: JobStatusBody): void {
    this.body = body;
    if (body.status === "queued" || body.status === "running") {
      this.phase = body.status;
    } else if (body.status === "done" && body.result) {
      this.phase = "done";
      this.playback = new PlaybackController(body.result);
    } else {
      this.phase = "failed";
      this.errorText = body.error
        ? `${body.error.type}: ${body.error.message}`
        : "planner failed";
    }
  }

  metricsRow(): Record<string, string> {
    const m = this.body?.result?.metrics;
    if (!m) return { method: this.method, status: this.phase };
    return {
      method: this.method,
      status: m.success ? "success" : m.failure_reason,
      length: m.path_length === null ? "-" : m.path_length.toFixed(3),
      time: `${m.wall_time.toFixed(2)}s`,
      clearance: m.min_clearance === null ? "-" : m.min_clearance.toFixed(3),
    };
  }
}

export class RunComparison {
  panels: JobPanel[] = [];

  constructor(private api: ApiClient) {}

  /** POST one plan per method; panels poll independently. */
  async run(state: WorkbenchState, poll: PollOptions = {}): Promise<JobPanel[]> {
    if (!state.methods.length) throw new Error("select at least one method");
    this.panels = state.methods.map(
      (method) => new JobPanel(method, state.exportTask(method)),
    );
    await Promise.all(this.panels.map((panel) => this.drive(panel, poll)));
    return this.panels;
  }

  private async drive(panel: JobPanel, poll: PollOptions): Promise<void> {
    try {
      const { id } = await this.api.submitPlan(panel.request);
      panel.jobId = id;
      panel.phase = "queued";
      const body = await pollJob(this.api, id, {
        ...poll,
        onUpdate: (b) => panel.applyUpdate(b),
      });
      panel.applyUpdate(body);
    } catch (err) {
      panel.phase = "failed";
      panel.errorText = err instanceof Error ? err.message : String(err);
    }
  }
}
