/** Workbench state: scene draft, start/goal entry, method selection.
 *
 * All edits clamp to robot limits and validate against workspace bounds, so
 * drafts submitted to the service are well-formed by construction.  Export
 * and import use the PlanRequest JSON schema verbatim.
 */

import type { GoalSpec, PlanRequest, RobotMeta, SceneDraft, SphereDraft, Triple } from "./types.js";

const clamp = (v: number, lo: number, hi: number) => Math.min(hi, Math.max(lo, v));

export class WorkbenchState {
  scene: SceneDraft;
  startConfig: number[];
  goal: GoalSpec;
  methods: string[] = [];
  seed = 0;
  budgetS = 60;

  constructor(public robot: RobotMeta) {
    this.scene = { bounds: structuredClone(robot.default_bounds), spheres: [] };
    this.startConfig = robot.limits_lo.map((lo, i) => clamp(0, lo, robot.limits_hi[i]));
    this.goal = { config: [...this.startConfig] };
  }

  setStart(joint: number, value: number): number {
    const v = clamp(value, this.robot.limits_lo[joint], this.robot.limits_hi[joint]);
    this.startConfig[joint] = v;
    return v;
  }

  setGoalJoint(joint: number, value: number): number {
    const v = clamp(value, this.robot.limits_lo[joint], this.robot.limits_hi[joint]);
    if (!this.goal.config) this.goal = { config: [...this.startConfig] };
    this.goal.config![joint] = v;
    return v;
  }

  setGoalPose(position: Triple, quaternion: [number, number, number, number]): void {
    this.goal = { pose: { position, quaternion } };
  }

  setGoalConfigMode(): void {
    if (!this.goal.config) this.goal = { config: [...this.startConfig] };
  }

  /** Returns an error message for invalid drafts, null when accepted. */
  validateSphere(sphere: SphereDraft): string | null {
    if (!(sphere.radius > 0)) return "radius must be positive";
    const { min, max } = this.scene.bounds;
    for (let axis = 0; axis < 3; axis++) {
      if (sphere.center[axis] < min[axis] || sphere.center[axis] > max[axis]) {
        return `center outside workspace bounds on axis ${"xyz"[axis]}`;
      }
    }
    return null;
  }

  addSphere(sphere: SphereDraft): string | null {
    const problem = this.validateSphere(sphere);
    if (problem === null) this.scene.spheres.push(structuredClone(sphere));
    return problem;
  }

  updateSphere(index: number, sphere: SphereDraft): string | null {
    const problem = this.validateSphere(sphere);
    if (problem === null) this.scene.spheres[index] = structuredClone(sphere);
    return problem;
  }

  removeSphere(index: number): void {
    this.scene.spheres.splice(index, 1);
  }

  clearSpheres(): void {
    this.scene.spheres = [];
  }

  toggleMethod(method: string, enabled: boolean): void {
    this.methods = this.methods.filter((m) => m !== method);
    if (enabled) this.methods.push(method);
  }

  /** Task JSON, identical to the service's PlanRequest schema. */
  exportTask(method: string = this.methods[0] ?? "shared_tree"): PlanRequest {
    return structuredClone({
      robot: this.robot.name,
      scene: this.scene,
      q_init: this.startConfig,
      goal: this.goal,
      method,
      seed: this.seed,
      budget_s: this.budgetS,
    });
  }

  /** Re-import an exported task; silently clamps configs to limits. */
  importTask(task: PlanRequest): string | null {
    if (task.robot !== this.robot.name) {
      return `task targets robot '${task.robot}', workbench has '${this.robot.name}'`;
    }
    if (task.q_init.length !== this.robot.dof) return "q_init dimension mismatch";
    if (task.goal.config && task.goal.config.length !== this.robot.dof) {
      return "goal config dimension mismatch";
    }
    for (const sphere of task.scene.spheres) {
      const problem = this.validateSphere(sphere);
      if (problem !== null) return problem;
    }
    this.scene = structuredClone(task.scene);
    this.startConfig = task.q_init.map((v, i) =>
      clamp(v, this.robot.limits_lo[i], this.robot.limits_hi[i]));
    this.goal = structuredClone(task.goal);
    if (this.goal.config) {
      this.goal = {
        config: this.goal.config.map((v, i) =>
          clamp(v, this.robot.limits_lo[i], this.robot.limits_hi[i])),
      };
    }
    this.seed = task.seed;
    this.budgetS = task.budget_s;
    return null;
  }
}
