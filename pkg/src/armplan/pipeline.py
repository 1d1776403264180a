"""Glue between config, planners, and the trained models: method adapters the
benchmark harness and the HTTP service both consume."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .diffusion import (
    CLOUD_SEED,
    Condition,
    GuidanceConfig,
    TrajectoryDiffusion,
)
from .encoder import CaeModel
from .evalbench import PlannerOutput, Task
from .kinematics import RobotModel
from .planner import (
    GoalSet,
    PlannerConfig,
    plan_informed_rrt_star,
    plan_rrt_star,
    plan_shared_tree,
    resample_path,
    shortcut_path,
)
from .world import sample_point_cloud

SAMPLING_METHODS = ("rrt_star", "informed", "shared_tree")
METHODS = SAMPLING_METHODS + ("diffusion",)


def planner_config_from(config: dict, seed: int, budget_s: float | None = None) -> PlannerConfig:
    p = config["planner"]
    return PlannerConfig(
        step_size=p["step_size"], goal_bias=p["goal_bias"], max_iters=p["max_iters"],
        rewire_gamma=p["rewire_gamma"], clearance=p["clearance"],
        time_budget=budget_s if budget_s is not None else p["time_budget"],
        seed=seed, shortcut_passes=p["shortcut_passes"],
        max_neighbors=p["max_neighbors"])


def guidance_from(config: dict) -> GuidanceConfig:
    g = config["guidance"]
    return GuidanceConfig(cfg_scale=g["cfg_scale"], collision_step=g["collision_step"],
                          safe_distance=g["safe_distance"],
                          inpaint_prefix=g["inpaint_prefix"],
                          inpaint_suffix=g["inpaint_suffix"],
                          eta_decay_frac=g["eta_decay_frac"],
                          endpoint_blend=g.get("endpoint_blend", 8))


@dataclass
class LoadedModels:
    """Optional learned components; sampling methods work without them."""

    diffusion: TrajectoryDiffusion | None = None
    cae: CaeModel | None = None


def condition_for(task: Task, cae: CaeModel, config: dict) -> Condition:
    """Scene latent + endpoints; obstacle-free scenes use the null condition."""
    if task.scene.spheres:
        cloud = sample_point_cloud(task.scene, config["cae"]["cloud_points"],
                                   seed=config["cae"].get("cloud_seed", CLOUD_SEED))
        z = cae.encode(cloud)
        return Condition(z=z, q_init=task.q_init, q_goal=task.q_goal)
    z = np.zeros(cae.config.latent_dim)
    return Condition(z=z, q_init=task.q_init, q_goal=task.q_goal, null_flag=True)


def run_method(method: str, task: Task, model: RobotModel, config: dict,
               seed: int, budget_s: float | None = None,
               models: LoadedModels | None = None) -> PlannerOutput:
    """Execute one planning method on one task and return its trajectory."""
    frames = config["diffusion"]["frames"]
    if method in SAMPLING_METHODS:
        cfg = planner_config_from(config, seed, budget_s)
        goals = GoalSet((task.q_goal,))
        start = time.perf_counter()
        if method == "rrt_star":
            path = plan_rrt_star(model, task.scene, task.q_init, goals, cfg)
        elif method == "informed":
            path = plan_informed_rrt_star(model, task.scene, task.q_init, goals, cfg)
        else:
            paths = plan_shared_tree(model, task.scene, task.q_init, goals, cfg)
            path = min(paths.values(), key=lambda p: p.cost)
        solve_time = path.trace.first_solution_time
        path = shortcut_path(model, task.scene, path, cfg)
        traj = resample_path(path, frames)
        _ = time.perf_counter() - start
        return PlannerOutput(trajectory=traj, solve_time=solve_time)
    if method == "diffusion":
        if models is None or models.diffusion is None or models.cae is None:
            raise ValueError("diffusion method requires trained model checkpoints")
        cond = condition_for(task, models.cae, config)
        start = time.perf_counter()
        result = models.diffusion.sample(cond, guidance_from(config), seed=seed,
                                         scene=task.scene)
        return PlannerOutput(trajectory=result.trajectory,
                             solve_time=time.perf_counter() - start)
    raise ValueError(f"unknown method '{method}'; expected one of {METHODS}")


def make_benchmark_planner(method: str, model: RobotModel, config: dict,
                           models: LoadedModels | None = None):
    def planner(task: Task, seed: int, budget_s: float) -> PlannerOutput:
        return run_method(method, task, model, config, seed, budget_s, models)

    return planner
