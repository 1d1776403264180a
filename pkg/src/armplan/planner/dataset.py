"""Planning-dataset pipeline: random sphere scenes, IK goal sets, shared-tree
planning, shortcutting, and fixed-length resampling, written to a compact
binary file with a JSON manifest sidecar."""

from __future__ import annotations

import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from ..kinematics import RobotModel, end_effector_pose
from ..motion import configs_clearance, densify
from ..world import Scene, SphereObstacle
from .base import GoalSet, PlannerConfig, PlanningError
from .ik import UnreachableTargetError, ik_solve
from .rrt import plan_shared_tree, resample_path, shortcut_path

MAGIC = b"ROPD"
VERSION = 1

# acceptance margin above the nominal clearance so float32 storage cannot
# push a stored record below the safe distance on reload
_GEN_EPS = 1e-4


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    """Random-scene distribution: sphere count/radius ranges inside a box."""

    n_spheres: tuple[int, int] = (1, 2)
    radius: tuple[float, float] = (0.12, 0.25)
    bounds_min: tuple[float, float, float] = (-0.95, -0.95, 0.0)
    bounds_max: tuple[float, float, float] = (0.95, 0.95, 1.3)
    # spheres are kept off the base column so start sampling stays feasible
    base_keepout: float = 0.3

    def sample(self, rng: np.random.Generator) -> Scene:
        lo = np.asarray(self.bounds_min)
        hi = np.asarray(self.bounds_max)
        n = int(rng.integers(self.n_spheres[0], self.n_spheres[1] + 1))
        spheres = []
        while len(spheres) < n:
            center = rng.uniform(lo, hi)
            radius = float(rng.uniform(*self.radius))
            axis_dist = float(np.linalg.norm(center[:2]))
            if axis_dist < radius + self.base_keepout and center[2] < 0.55:
                continue
            spheres.append(SphereObstacle(center, radius))
        return Scene(spheres=tuple(spheres), bounds_min=lo, bounds_max=hi)


@dataclass
class DatasetRecord:
    scene: Scene
    q_init: np.ndarray
    q_goal: np.ndarray
    trajectory: np.ndarray  # (N, D) frame-major

    def validate(self, model: RobotModel, safe_distance: float,
                 atol: float = 1e-6) -> None:
        traj = self.trajectory
        if traj.ndim != 2 or traj.shape[1] != model.dof:
            raise DatasetError(f"trajectory shape {traj.shape} does not match dof {model.dof}")
        if not np.allclose(traj[0], self.q_init, atol=atol):
            raise DatasetError("trajectory does not start at q_init")
        if not np.allclose(traj[-1], self.q_goal, atol=atol):
            raise DatasetError("trajectory does not end at q_goal")
        if not model.within_limits(traj.reshape(-1, model.dof).min(axis=0), tol=atol) \
                or not model.within_limits(traj.reshape(-1, model.dof).max(axis=0), tol=atol):
            raise DatasetError("trajectory leaves joint limits")
        dense = densify(traj)
        clear = configs_clearance(model, self.scene, dense)
        if float(clear.min()) < safe_distance - atol:
            raise DatasetError(
                f"densified clearance {float(clear.min()):.4f} below {safe_distance}")


@dataclass
class GenStats:
    attempts: int = 0
    rejected_start: int = 0
    rejected_ik: int = 0
    rejected_plan: int = 0
    rejected_validation: int = 0

    def merge(self, other: "GenStats") -> None:
        self.attempts += other.attempts
        self.rejected_start += other.rejected_start
        self.rejected_ik += other.rejected_ik
        self.rejected_plan += other.rejected_plan
        self.rejected_validation += other.rejected_validation

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _sample_clear_config(model: RobotModel, scene: Scene, rng: np.random.Generator,
                         clearance: float, tries: int = 200) -> np.ndarray | None:
    lo, hi = model.limits_lo, model.limits_hi
    batch = 32
    for _ in range(tries // batch + 1):
        qs = rng.uniform(lo, hi, size=(batch, model.dof))
        clear = configs_clearance(model, scene, qs)
        hit = np.flatnonzero(clear >= clearance)
        if hit.size:
            return qs[hit[0]]
    return None


def generate_record(model: RobotModel, spec: SceneSpec, cfg: PlannerConfig,
                    frames: int, seed: int, index: int) -> tuple[DatasetRecord, GenStats]:
    """Produce one validated record; deterministic in (seed, index)."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, index)))
    stats = GenStats()
    margin = cfg.clearance + _GEN_EPS
    for _ in range(60):
        stats.attempts += 1
        scene = spec.sample(rng)
        q_init = _sample_clear_config(model, scene, rng, margin)
        if q_init is None:
            stats.rejected_start += 1
            continue
        q_star = _sample_clear_config(model, scene, rng, margin)
        if q_star is None:
            stats.rejected_start += 1
            continue
        target = end_effector_pose(model, q_star)
        try:
            goals = ik_solve(model, target, n=3, seed=int(rng.integers(2 ** 31)),
                             scene=scene, clearance=margin, max_restarts=20, iters=150)
        except UnreachableTargetError:
            stats.rejected_ik += 1
            continue
        run_cfg = PlannerConfig(
            step_size=cfg.step_size, goal_bias=cfg.goal_bias, max_iters=cfg.max_iters,
            rewire_gamma=cfg.rewire_gamma, clearance=cfg.clearance,
            time_budget=cfg.time_budget, seed=int(rng.integers(2 ** 31)),
            shortcut_passes=cfg.shortcut_passes, max_neighbors=cfg.max_neighbors)
        try:
            paths = plan_shared_tree(model, scene, q_init, goals, run_cfg,
                                     idle_stop=max(100, cfg.max_iters // 10))
        except PlanningError:
            stats.rejected_plan += 1
            continue
        best = min(paths.values(), key=lambda p: p.cost)
        best = shortcut_path(model, scene, best, run_cfg,
                             rng=np.random.default_rng(int(rng.integers(2 ** 31))))
        traj = resample_path(best, frames)
        record = DatasetRecord(scene=scene, q_init=traj[0].copy(),
                               q_goal=traj[-1].copy(), trajectory=traj)
        try:
            record.validate(model, cfg.clearance)
        except DatasetError:
            stats.rejected_validation += 1
            continue
        return record, stats
    raise DatasetError(f"record {index}: no feasible problem after {stats.attempts} attempts")


def encode_record(record: DatasetRecord) -> bytes:
    out = bytearray()
    spheres = record.scene.spheres
    out += struct.pack("<I", len(spheres))
    for s in spheres:
        out += struct.pack("<4f", *s.center, s.radius)
    n, d = record.trajectory.shape
    out += struct.pack("<II", d, n)
    out += np.asarray(record.q_init, dtype="<f4").tobytes()
    out += np.asarray(record.q_goal, dtype="<f4").tobytes()
    out += np.asarray(record.trajectory, dtype="<f4").tobytes()
    return bytes(out)


def _decode_record(buf: memoryview, offset: int,
                   bounds_min: np.ndarray, bounds_max: np.ndarray) -> tuple[DatasetRecord, int]:
    (n_spheres,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    spheres = []
    for _ in range(n_spheres):
        cx, cy, cz, r = struct.unpack_from("<4f", buf, offset)
        offset += 16
        spheres.append(SphereObstacle(np.array([cx, cy, cz]), float(r)))
    d, n = struct.unpack_from("<II", buf, offset)
    offset += 8
    q_init = np.frombuffer(buf, dtype="<f4", count=d, offset=offset).astype(float)
    offset += 4 * d
    q_goal = np.frombuffer(buf, dtype="<f4", count=d, offset=offset).astype(float)
    offset += 4 * d
    traj = np.frombuffer(buf, dtype="<f4", count=n * d, offset=offset).astype(float)
    offset += 4 * n * d
    scene = Scene(spheres=tuple(spheres), bounds_min=bounds_min, bounds_max=bounds_max)
    return DatasetRecord(scene, q_init, q_goal, traj.reshape(n, d)), offset


def _worker(args) -> tuple[int, bytes, GenStats]:
    robot_file, spec, cfg, frames, seed, index = args
    from ..kinematics import load_robot

    model = load_robot(robot_file)
    record, stats = generate_record(model, spec, cfg, frames, seed, index)
    return index, encode_record(record), stats


def generate_dataset(model: RobotModel, robot_file: str, n_records: int,
                     spec: SceneSpec, cfg: PlannerConfig, out_path: str | FsPath,
                     seed: int, frames: int = 50, workers: int = 1,
                     progress: bool = False) -> dict:
    """Generate n_records problems and write the dataset plus its manifest.

    Records are independent and seeded by (seed, index), so the file is
    byte-identical for a fixed seed regardless of worker count.
    """
    out_path = FsPath(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    jobs = [(robot_file, spec, cfg, frames, seed, i) for i in range(n_records)]
    payloads: dict[int, bytes] = {}
    totals = GenStats()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for index, blob, stats in pool.map(_worker, jobs, chunksize=4):
                payloads[index] = blob
                totals.merge(stats)
                if progress and (index + 1) % 50 == 0:
                    print(f"  record {index + 1}/{n_records}", flush=True)
    else:
        for job in jobs:
            index, blob, stats = _worker(job)
            payloads[index] = blob
            totals.merge(stats)
            if progress and (index + 1) % 50 == 0:
                print(f"  record {index + 1}/{n_records}", flush=True)

    with open(out_path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", n_records))
        for i in range(n_records):
            f.write(payloads[i])

    manifest = {
        "seed": seed,
        "counts": {"records": n_records, "attempts": totals.attempts},
        "rejections": totals.to_dict(),
        "robot_name": model.name,
        "safe_distance": cfg.clearance,
        "frames_per_trajectory": frames,
        "bounds": {"min": list(spec.bounds_min), "max": list(spec.bounds_max)},
        "scene_spec": {"n_spheres": list(spec.n_spheres), "radius": list(spec.radius),
                       "base_keepout": spec.base_keepout},
        "planner": {"step_size": cfg.step_size, "goal_bias": cfg.goal_bias,
                    "max_iters": cfg.max_iters, "rewire_gamma": cfg.rewire_gamma,
                    "shortcut_passes": cfg.shortcut_passes, "seed": cfg.seed},
    }
    manifest_path(out_path).write_text(json.dumps(manifest, indent=1))
    return manifest


def manifest_path(dataset_path: str | FsPath) -> FsPath:
    p = FsPath(dataset_path)
    return p.with_suffix(p.suffix + ".manifest.json")


def load_dataset(path: str | FsPath) -> tuple[list[DatasetRecord], dict]:
    """Read a dataset file and its manifest; raises DatasetError on corruption."""
    path = FsPath(path)
    blob = memoryview(path.read_bytes())
    if bytes(blob[:4]) != MAGIC:
        raise DatasetError(f"{path}: bad magic")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise DatasetError(f"{path}: unsupported version {version}")
    (count,) = struct.unpack_from("<Q", blob, 8)
    mpath = manifest_path(path)
    manifest = json.loads(mpath.read_text()) if mpath.exists() else {}
    bounds = manifest.get("bounds", {})
    bmin = np.asarray(bounds.get("min", [-0.95, -0.95, 0.0]), dtype=float)
    bmax = np.asarray(bounds.get("max", [0.95, 0.95, 1.3]), dtype=float)
    records = []
    offset = 16
    for _ in range(count):
        record, offset = _decode_record(blob, offset, bmin, bmax)
        records.append(record)
    if offset != len(blob):
        raise DatasetError(f"{path}: trailing bytes after {count} records")
    return records, manifest
