/** Thin typed client for the planning service; fetch is injectable for tests. */

import type { JobStatusBody, LinkPose, PlanRequest, RobotMeta, SceneDraft } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path);
    if (!resp.ok) throw new ApiError(resp.status, await describe(resp));
    return (await resp.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) throw new ApiError(resp.status, await describe(resp));
    return (await resp.json()) as T;
  }

  getRobot(name = "panda7"): Promise<RobotMeta> {
    return this.getJson(`/api/robot?name=${encodeURIComponent(name)}`);
  }

  /** Link poses for a configuration: the UI never computes kinematics itself. */
  fk(q: number[], robot = "panda7"): Promise<{ link_poses: LinkPose[] }> {
    const joined = q.map((v) => v.toFixed(9)).join(",");
    return this.getJson(`/api/fk?q=${joined}&robot=${encodeURIComponent(robot)}`);
  }

  registerScene(scene: SceneDraft): Promise<{ id: string }> {
    return this.postJson("/api/scenes", scene);
  }

  submitPlan(request: PlanRequest): Promise<{ id: string }> {
    return this.postJson("/api/plan", request);
  }

  /** Poll endpoint: a 500 carries the failed job body rather than an error. */
  async getPlan(jobId: string): Promise<JobStatusBody> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/plan/${jobId}`);
    if (resp.status === 500) {
      const body = (await resp.json()) as JobStatusBody;
      if (body && body.status === "failed") return body;
      throw new ApiError(500, "planner failure with malformed body");
    }
    if (!resp.ok) throw new ApiError(resp.status, await describe(resp));
    return (await resp.json()) as JobStatusBody;
  }
}

async function describe(resp: Response): Promise<string> {
  try {
    const body = await resp.json();
    return typeof body?.detail === "string" ? body.detail : JSON.stringify(body);
  } catch {
    return `HTTP ${resp.status}`;
  }
}
