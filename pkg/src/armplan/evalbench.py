"""Trajectory metrics and a multi-planner benchmark harness.

A trajectory succeeds when it reaches the goal pose within tight position and
orientation tolerances and exhibits no physical violation: fatal collision
(negative clearance on the densified motion), joint-limit breach, or erratic
per-frame jumps.  Clearance inside the safety band is a warning, not a
failure; warnings are reported per frame so clients can highlight them.
"""

from __future__ import annotations

import time
import traceback
from dataclasses import dataclass, field

import numpy as np

from .kinematics import RobotModel, end_effector_pose, frame_origins, rotation_angle
from .motion import configs_clearance, densify
from .world import Scene

FAILURE_REASONS = ("collision", "limits", "erratic", "goal_miss", "timeout", "none")


@dataclass(frozen=True)
class EvalThresholds:
    pos_tol: float = 0.01          # meters
    ori_tol_deg: float = 15.0
    max_joint_step: float = 0.2    # rad per frame, erratic-motion bound
    safe_distance: float = 0.05
    densify_step: float = 0.01

    def __post_init__(self) -> None:
        for name in ("pos_tol", "ori_tol_deg", "max_joint_step",
                     "safe_distance", "densify_step"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class Task:
    """One planning problem; the goal pose is the FK pose of q_goal."""

    scene: Scene
    q_init: np.ndarray
    q_goal: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "q_init", np.asarray(self.q_init, dtype=float))
        object.__setattr__(self, "q_goal", np.asarray(self.q_goal, dtype=float))


@dataclass
class MetricsRecord:
    success: bool
    collision: bool
    path_length: float
    wall_time: float
    failure_reason: str
    min_clearance: float = float("inf")
    goal_pos_error: float = float("nan")
    goal_ori_error_deg: float = float("nan")
    max_step: float = 0.0
    frame_clearances: list[float] = field(default_factory=list)
    margin_warning_frames: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.failure_reason not in FAILURE_REASONS:
            raise ValueError(f"unknown failure reason '{self.failure_reason}'")
        if self.success and self.failure_reason != "none":
            raise ValueError("successful records must carry failure_reason 'none'")

    def to_dict(self) -> dict:
        def safe(v: float):
            return float(v) if np.isfinite(v) else None

        return {
            "success": self.success,
            "collision": self.collision,
            "path_length": safe(self.path_length),
            "wall_time": self.wall_time,
            "failure_reason": self.failure_reason,
            "min_clearance": safe(self.min_clearance),
            "goal_pos_error": safe(self.goal_pos_error),
            "goal_ori_error_deg": safe(self.goal_ori_error_deg),
            "max_step": self.max_step,
            "frame_clearances": [safe(c) for c in self.frame_clearances],
            "margin_warning_frames": self.margin_warning_frames,
        }


def path_length(trajectory: np.ndarray, model: RobotModel) -> float:
    """Summed workspace travel of every link-frame origin, meters."""
    frames = np.atleast_2d(np.asarray(trajectory, dtype=float))
    if frames.shape[0] < 2:
        return 0.0
    origins = frame_origins(model, frames)          # (N, D+1, 3)
    steps = np.linalg.norm(np.diff(origins, axis=0), axis=2)
    return float(steps.sum())


def evaluate(trajectory: np.ndarray, task: Task, model: RobotModel,
             thresholds: EvalThresholds | None = None,
             wall_time: float = 0.0) -> MetricsRecord:
    """Score one trajectory against a task; pure and deterministic."""
    th = thresholds or EvalThresholds()
    traj = np.atleast_2d(np.asarray(trajectory, dtype=float))
    if traj.shape[0] < 1:
        raise ValueError("trajectory is empty")
    if traj.shape[1] != model.dof:
        raise ValueError(f"trajectory dof {traj.shape[1]} != model dof {model.dof}")

    frame_clear = configs_clearance(model, task.scene, traj)
    dense = densify(traj, th.densify_step)
    dense_clear = configs_clearance(model, task.scene, dense)
    min_clear = float(dense_clear.min()) if dense_clear.size else float("inf")
    collision = bool(min_clear < 0.0)
    margin_frames = [int(i) for i in
                     np.flatnonzero((frame_clear >= 0.0)
                                    & (frame_clear < th.safe_distance))]

    lo, hi = model.limits_lo, model.limits_hi
    limits_ok = bool(np.all(traj >= lo - 1e-9) and np.all(traj <= hi + 1e-9))

    max_step = float(np.max(np.abs(np.diff(traj, axis=0)))) if traj.shape[0] > 1 else 0.0
    erratic = max_step > th.max_joint_step

    goal_pose = end_effector_pose(model, task.q_goal)
    final_pose = end_effector_pose(model, traj[-1])
    pos_err = float(np.linalg.norm(final_pose.translation - goal_pose.translation))
    ori_err = float(np.degrees(rotation_angle(final_pose.rotation, goal_pose.rotation)))
    goal_ok = pos_err <= th.pos_tol and ori_err <= th.ori_tol_deg

    if collision:
        reason = "collision"
    elif not limits_ok:
        reason = "limits"
    elif erratic:
        reason = "erratic"
    elif not goal_ok:
        reason = "goal_miss"
    else:
        reason = "none"

    return MetricsRecord(
        success=reason == "none",
        collision=collision,
        path_length=path_length(traj, model),
        wall_time=wall_time,
        failure_reason=reason,
        min_clearance=min_clear,
        goal_pos_error=pos_err,
        goal_ori_error_deg=ori_err,
        max_step=max_step,
        frame_clearances=[float(c) for c in frame_clear],
        margin_warning_frames=margin_frames,
    )


@dataclass
class PlannerOutput:
    """What a benchmark planner hands back for one task."""

    trajectory: np.ndarray
    solve_time: float | None = None   # time to first solution; wall time if None


@dataclass
class BenchmarkReport:
    budget_s: float
    seed: int
    n_tasks: int
    planners: dict[str, dict]
    checkpoints: list[float]

    def to_dict(self) -> dict:
        return {"budget_s": self.budget_s, "seed": self.seed, "n_tasks": self.n_tasks,
                "checkpoints": self.checkpoints, "planners": self.planners}

    def text_table(self) -> str:
        header = f"{'Method':<16}{'Success (%)':>12}{'Collision (%)':>15}" \
                 f"{'Length':>10}{'Time (s)':>10}"
        lines = [header, "-" * len(header)]
        for name, stats in self.planners.items():
            length = stats["mean_length_success"]
            length_text = f"{length:>10.3f}" if length is not None else f"{'-':>10}"
            lines.append(
                f"{name:<16}{stats['success_rate'] * 100:>12.1f}"
                f"{stats['collision_rate'] * 100:>15.1f}"
                f"{length_text}"
                f"{stats['mean_wall_time']:>10.2f}")
        return "\n".join(lines)

    def curves_csv(self, planner: str) -> str:
        rows = ["time_s,success_rate"]
        for t, r in zip(self.checkpoints, self.planners[planner]["curve"]):
            rows.append(f"{t:.3f},{r:.4f}")
        return "\n".join(rows)


def run_benchmark(planners: dict, tasks: list[Task], model: RobotModel,
                  budget_s: float, thresholds: EvalThresholds | None = None,
                  seed: int = 0, n_checkpoints: int = 25,
                  progress: bool = False) -> BenchmarkReport:
    """Run every planner on every task and aggregate Table-style metrics.

    ``planners`` maps name -> fn(task, seed, budget_s) -> PlannerOutput.
    Planner exceptions are recorded as timeout failures; the harness continues.
    Tasks are processed in order, and per-(planner, task) seeds derive from
    the harness seed, so reports are reproducible.
    """
    if not planners:
        raise ValueError("need at least one planner")
    if not tasks:
        raise ValueError("need at least one task")
    th = thresholds or EvalThresholds()
    checkpoints = list(np.linspace(budget_s / n_checkpoints, budget_s, n_checkpoints))
    results: dict[str, dict] = {}
    for p_idx, (name, fn) in enumerate(planners.items()):
        records: list[MetricsRecord] = []
        solve_times: list[float] = []
        errors: list[str] = []
        for t_idx, task in enumerate(tasks):
            run_seed = int(np.random.SeedSequence(
                entropy=(seed, p_idx, t_idx)).generate_state(1)[0])
            start = time.perf_counter()
            try:
                out = fn(task, run_seed, budget_s)
                elapsed = time.perf_counter() - start
                solve = out.solve_time if out.solve_time is not None else elapsed
                record = evaluate(out.trajectory, task, model, th, wall_time=elapsed)
            except Exception as exc:  # planner crash: log, keep going
                elapsed = time.perf_counter() - start
                solve = float("inf")
                errors.append(f"task {t_idx}: {exc.__class__.__name__}: {exc}")
                if not isinstance(exc, (RuntimeError, ValueError)):
                    errors.append(traceback.format_exc(limit=3))
                record = MetricsRecord(success=False, collision=False,
                                       path_length=float("nan"), wall_time=elapsed,
                                       failure_reason="timeout")
            records.append(record)
            solve_times.append(solve)
            if progress:
                print(f"  [{name}] task {t_idx + 1}/{len(tasks)}: "
                      f"{record.failure_reason if not record.success else 'ok'} "
                      f"({elapsed:.2f}s)", flush=True)
        n = len(tasks)
        success_mask = np.array([r.success for r in records])
        returned = np.array([np.isfinite(r.path_length) for r in records])
        collided = np.array([r.collision for r in records])
        lengths = np.array([r.path_length for r in records])
        curve = [float(np.mean([(s and st <= cp) for s, st in
                                zip(success_mask, solve_times)]))
                 for cp in checkpoints]
        reasons: dict[str, int] = {}
        for r in records:
            if not r.success:
                reasons[r.failure_reason] = reasons.get(r.failure_reason, 0) + 1
        results[name] = {
            "success_rate": float(success_mask.mean()),
            "collision_rate": float(collided.mean()),
            "collision_rate_returned": float(collided[returned].mean())
            if returned.any() else 0.0,
            "mean_length_success": float(lengths[success_mask].mean())
            if success_mask.any() else None,
            "mean_wall_time": float(np.mean([r.wall_time for r in records])),
            "failures": reasons,
            "errors": errors,
            "curve": curve,
            "records": [r.to_dict() for r in records],
        }
    return BenchmarkReport(budget_s=budget_s, seed=seed, n_tasks=len(tasks),
                           planners=results, checkpoints=[float(c) for c in checkpoints])
