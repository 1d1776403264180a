"""HTTP service: scene registry, asynchronous plan jobs, robot metadata, and
forward-kinematics queries, consumed by the browser workbench.

Jobs are polled: POST /api/plan enqueues and returns an id; GET /api/plan/{id}
reports status and, once done, the trajectory payload with per-frame link
poses and metrics, so clients never run kinematics or collision math.
Completed jobs are appended to a JSONL log and reload on restart.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .evalbench import EvalThresholds, Task, evaluate
from .kinematics import RobotModel, forward_kinematics, load_robot
from .pipeline import METHODS, LoadedModels, run_method
from .planner import ik_solve
from .resources import robot_path
from .world import Scene

JOB_STATES = ("queued", "running", "done", "failed")


def rotation_to_quaternion(r: np.ndarray) -> list[float]:
    """Unit quaternion [x, y, z, w] of a rotation matrix."""
    trace = float(np.trace(r))
    if trace > 0:
        s = np.sqrt(trace + 1.0) * 2
        w = 0.25 * s
        x = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 2] - r[2, 0]) / s
        z = (r[1, 0] - r[0, 1]) / s
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
        w = (r[2, 1] - r[1, 2]) / s
        x = 0.25 * s
        y = (r[0, 1] + r[1, 0]) / s
        z = (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] > r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
        w = (r[0, 2] - r[2, 0]) / s
        x = (r[0, 1] + r[1, 0]) / s
        y = 0.25 * s
        z = (r[1, 2] + r[2, 1]) / s
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
        w = (r[1, 0] - r[0, 1]) / s
        x = (r[0, 2] + r[2, 0]) / s
        y = (r[1, 2] + r[2, 1]) / s
        z = 0.25 * s
    return [float(x), float(y), float(z), float(w)]


def link_poses_payload(model: RobotModel, frames: np.ndarray) -> list[list[dict]]:
    out = []
    for q in frames:
        poses = forward_kinematics(model, q)
        out.append([{"p": [float(v) for v in pose.translation],
                     "q": rotation_to_quaternion(pose.rotation)}
                    for pose in poses])
    return out


class GoalSpec(BaseModel):
    config: list[float] | None = None
    pose: dict | None = None


class PlanRequest(BaseModel):
    robot: str = "panda7"
    scene: dict | str
    q_init: list[float]
    goal: GoalSpec
    method: str = "shared_tree"
    seed: int = 0
    budget_s: float = Field(default=60.0, gt=0)


class SceneBody(BaseModel):
    bounds: dict | None = None
    spheres: list[dict] = Field(default_factory=list)


class PlanJob:
    def __init__(self, job_id: str, request: dict):
        self.id = job_id
        self.request = request
        self.status = "queued"
        self.result: dict | None = None
        self.error: dict | None = None

    def public(self) -> dict:
        body = {"id": self.id, "status": self.status}
        if self.status == "done":
            body["result"] = self.result
        if self.status == "failed":
            body["error"] = self.error
        return body


class JobStore:
    """Thread-safe job registry with an append-only JSONL terminal-state log."""

    def __init__(self, log_path: str | Path | None):
        self._jobs: dict[str, PlanJob] = {}
        self._lock = threading.Lock()
        self._log_path = Path(log_path) if log_path else None

    def create(self, request: dict) -> PlanJob:
        job = PlanJob(uuid.uuid4().hex, request)
        with self._lock:
            self._jobs[job.id] = job
        return job

    def get(self, job_id: str) -> PlanJob | None:
        with self._lock:
            return self._jobs.get(job_id)

    def set_running(self, job: PlanJob) -> None:
        with self._lock:
            if job.status == "queued":
                job.status = "running"

    def finish(self, job: PlanJob, result: dict | None, error: dict | None) -> None:
        with self._lock:
            if job.status in ("done", "failed"):
                return  # terminal states are immutable
            job.result = result
            job.error = error
            job.status = "done" if error is None else "failed"
        self._append_log(job)

    def _append_log(self, job: PlanJob) -> None:
        if self._log_path is None:
            return
        entry = {"id": job.id, "status": job.status, "request": job.request,
                 "result": job.result, "error": job.error, "ts": time.time()}
        with self._lock:
            with open(self._log_path, "a") as f:
                f.write(json.dumps(entry) + "\n")

    def replay(self) -> int:
        """Reload terminal job states from the log; returns the count."""
        if self._log_path is None or not self._log_path.exists():
            return 0
        count = 0
        for line in self._log_path.read_text().splitlines():
            if not line.strip():
                continue
            entry = json.loads(line)
            job = PlanJob(entry["id"], entry["request"])
            job.status = entry["status"]
            job.result = entry.get("result")
            job.error = entry.get("error")
            with self._lock:
                self._jobs[job.id] = job
            count += 1
        return count


def create_app(config: dict, models: LoadedModels | None = None,
               job_log: str | Path | None = None,
               frontend_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="armplan service")
    robots = {name: load_robot(robot_path(name)) for name in ("panda7", "planar2")}
    scenes: dict[str, dict] = {}
    store = JobStore(job_log)
    replayed = store.replay()
    if replayed:
        print(f"replayed {replayed} jobs from {job_log}", flush=True)
    executor = ThreadPoolExecutor(max_workers=int(config["serve"]["max_jobs"]))
    models = models or LoadedModels()
    thresholds = EvalThresholds(
        pos_tol=config["eval"]["pos_tol"], ori_tol_deg=config["eval"]["ori_tol_deg"],
        max_joint_step=config["eval"]["max_joint_step"],
        safe_distance=config["eval"]["safe_distance"],
        densify_step=config["eval"]["densify_step"])

    def resolve_scene(spec: dict | str) -> Scene:
        if isinstance(spec, str):
            if spec not in scenes:
                raise HTTPException(404, detail=f"unknown scene id '{spec}'")
            spec = scenes[spec]
        try:
            return Scene.from_dict(spec)
        except (ValueError, TypeError, KeyError) as exc:
            raise HTTPException(400, detail=f"invalid scene: {exc}") from exc

    def resolve_robot(name: str) -> RobotModel:
        if name not in robots:
            raise HTTPException(409, detail=f"unknown robot '{name}'")
        return robots[name]

    def run_job(job: PlanJob) -> None:
        store.set_running(job)
        req = job.request
        try:
            model = resolve_robot(req["robot"])
            scene = Scene.from_dict(req["scene"])
            q_init = np.asarray(req["q_init"], dtype=float)
            if q_init.size != model.dof:
                raise ValueError(f"q_init has {q_init.size} entries, dof is {model.dof}")
            goal = req["goal"]
            if goal.get("config") is not None:
                q_goal = np.asarray(goal["config"], dtype=float)
                if q_goal.size != model.dof:
                    raise ValueError("goal config dimension mismatch")
            else:
                pose = goal["pose"]
                from .kinematics import LinkPose
                rot = _quat_to_rotation(pose["quaternion"])
                target = LinkPose(rotation=rot,
                                  translation=np.asarray(pose["position"], dtype=float))
                goal_set = ik_solve(model, target, n=int(config["ik"]["solutions"]),
                                    seed=int(req["seed"]), scene=scene,
                                    clearance=config["safe_distance"],
                                    max_restarts=int(config["ik"]["max_restarts"]),
                                    iters=int(config["ik"]["iters"]),
                                    damping=float(config["ik"]["damping"]))
                q_goal = goal_set.configs[0]
            task = Task(scene=scene, q_init=q_init, q_goal=q_goal)
            start = time.perf_counter()
            out = run_method(req["method"], task, model, config, int(req["seed"]),
                             budget_s=float(req["budget_s"]), models=models)
            elapsed = time.perf_counter() - start
            metrics = evaluate(out.trajectory, task, model, thresholds,
                               wall_time=elapsed)
            result = {
                "frames": [[float(v) for v in q] for q in out.trajectory],
                "link_poses": link_poses_payload(model, out.trajectory),
                "metrics": metrics.to_dict(),
                "q_goal": [float(v) for v in q_goal],
            }
            store.finish(job, result, None)
        except Exception as exc:
            store.finish(job, None, {"type": exc.__class__.__name__,
                                     "message": str(exc)})

    @app.post("/api/scenes")
    def register_scene(body: SceneBody):
        raw = {"bounds": body.bounds, "spheres": body.spheres}
        if body.bounds is None:
            raw.pop("bounds")
        try:
            Scene.from_dict(raw)
        except (ValueError, TypeError, KeyError) as exc:
            raise HTTPException(400, detail=f"invalid scene: {exc}") from exc
        scene_id = uuid.uuid4().hex
        scenes[scene_id] = raw
        return {"id": scene_id}

    @app.post("/api/plan")
    def submit_plan(req: PlanRequest):
        if req.method not in METHODS:
            raise HTTPException(400, detail=f"unknown method '{req.method}'")
        if req.method == "diffusion" and models.diffusion is None:
            raise HTTPException(400, detail="no diffusion checkpoint loaded")
        model = resolve_robot(req.robot)
        scene = resolve_scene(req.scene)
        if len(req.q_init) != model.dof:
            raise HTTPException(400, detail=f"q_init needs {model.dof} entries")
        if req.goal.config is None and req.goal.pose is None:
            raise HTTPException(400, detail="goal needs either config or pose")
        if req.goal.config is not None and len(req.goal.config) != model.dof:
            raise HTTPException(400, detail=f"goal config needs {model.dof} entries")
        request = {"robot": req.robot, "scene": scene.to_dict(),
                   "q_init": req.q_init,
                   "goal": {"config": req.goal.config, "pose": req.goal.pose},
                   "method": req.method, "seed": req.seed, "budget_s": req.budget_s}
        job = store.create(request)
        executor.submit(run_job, job)
        return {"id": job.id}

    @app.get("/api/plan/{job_id}")
    def poll_plan(job_id: str):
        job = store.get(job_id)
        if job is None:
            raise HTTPException(404, detail=f"unknown job id '{job_id}'")
        if job.status == "failed":
            # planner failure: structured body under a 500 per the API contract
            return JSONResponse(status_code=500, content=job.public())
        return job.public()

    @app.get("/api/robot")
    def robot_meta(name: str = "panda7"):
        model = resolve_robot(name)
        return {
            "name": model.name,
            "dof": model.dof,
            "limits_lo": [j.limit_lo for j in model.joints],
            "limits_hi": [j.limit_hi for j in model.joints],
            "link_points": [[list(map(float, p)) for p in pts]
                            for pts in model.link_points],
            "safe_distance": config["safe_distance"],
            "methods": [m for m in METHODS
                        if m != "diffusion" or models.diffusion is not None],
            "default_bounds": {"min": list(config["dataset"]["bounds_min"]),
                               "max": list(config["dataset"]["bounds_max"])},
        }

    @app.get("/api/fk")
    def fk_query(q: str, robot: str = "panda7"):
        model = resolve_robot(robot)
        try:
            vec = np.array([float(v) for v in q.split(",")])
        except ValueError as exc:
            raise HTTPException(400, detail=f"malformed q: {exc}") from exc
        if vec.size != model.dof:
            raise HTTPException(400, detail=f"q needs {model.dof} entries, got {vec.size}")
        if not np.all(np.isfinite(vec)):
            raise HTTPException(400, detail="q contains non-finite values")
        poses = forward_kinematics(model, vec)
        return {"link_poses": [{"p": [float(v) for v in pose.translation],
                                "q": rotation_to_quaternion(pose.rotation)}
                               for pose in poses]}

    if frontend_dir is not None and Path(frontend_dir).exists():
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True),
                  name="frontend")

    return app


def _quat_to_rotation(q: list[float]) -> np.ndarray:
    """Rotation matrix from a quaternion [x, y, z, w]."""
    x, y, z, w = [float(v) for v in q]
    n = np.sqrt(x * x + y * y + z * z + w * w)
    if n < 1e-12:
        raise ValueError("zero quaternion")
    x, y, z, w = x / n, y / n, z / n, w / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
