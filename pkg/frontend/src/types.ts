/** Shared wire types; these mirror the HTTP API schemas exactly. */

export type Triple = [number, number, number];
export type Quaternion = [number, number, number, number]; // x, y, z, w

export interface SphereDraft {
  center: Triple;
  radius: number;
}

export interface SceneDraft {
  bounds: { min: Triple; max: Triple };
  spheres: SphereDraft[];
}

export type GoalSpec =
  | { config: number[]; pose?: undefined }
  | { pose: { position: Triple; quaternion: Quaternion }; config?: undefined };

export interface PlanRequest {
  robot: string;
  scene: SceneDraft;
  q_init: number[];
  goal: GoalSpec;
  method: string;
  seed: number;
  budget_s: number;
}

export interface RobotMeta {
  name: string;
  dof: number;
  limits_lo: number[];
  limits_hi: number[];
  link_points: Triple[][];
  safe_distance: number;
  methods: string[];
  default_bounds: { min: Triple; max: Triple };
}

export interface LinkPose {
  p: Triple;
  q: Quaternion;
}

export interface Metrics {
  success: boolean;
  collision: boolean;
  path_length: number | null;
  wall_time: number;
  failure_reason: string;
  min_clearance: number | null;
  goal_pos_error: number | null;
  goal_ori_error_deg: number | null;
  max_step: number;
  frame_clearances: (number | null)[];
  margin_warning_frames: number[];
}

export interface PlanResult {
  frames: number[][];
  link_poses: LinkPose[][];
  metrics: Metrics;
  q_goal: number[];
}

export interface JobStatusBody {
  id: string;
  status: "queued" | "running" | "done" | "failed";
  result?: PlanResult;
  error?: { type: string; message: string };
}
