"""Command-line entry points for every pipeline stage.

Each command reads the packaged defaults, an optional --config JSON file, and
flag overrides, in that order.  Outputs are machine-readable files at the
declared paths; failures exit nonzero with a one-line diagnostic.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .config import load_config
from .diffusion import (
    DenoiserConfig,
    LossWeights,
    NoiseSchedule,
    TrainConfig,
    TrajectoryDiffusion,
    build_examples,
    train,
)
from .encoder import CaeConfig, CaeModel, train_cae
from .evalbench import EvalThresholds, Task, evaluate, run_benchmark
from .kinematics import load_robot
from .pipeline import METHODS, LoadedModels, make_benchmark_planner, run_method
from .planner import PlannerConfig, SceneSpec, generate_dataset, load_dataset
from .resources import robot_path, scene_path
from .world import Scene, load_scene, sample_point_cloud


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    log = {"error": message}
    Path("armplan_error.json").write_text(json.dumps(log, indent=1))
    sys.exit(1)


def _robot_from(config: dict, robot_flag: str | None):
    name = robot_flag or config["robot"]
    path = Path(name)
    if path.exists():
        return load_robot(path), str(path)
    return load_robot(robot_path(name)), str(robot_path(name))


def _parse_qvec(text: str, dof: int, label: str) -> np.ndarray:
    try:
        vec = np.array([float(v) for v in text.split(",")])
    except ValueError:
        _fail(f"{label} must be comma-separated numbers, got '{text}'")
    if vec.size != dof:
        _fail(f"{label} needs {dof} entries, got {vec.size}")
    return vec


def _scene_from(config: dict, scene_flag: str | None) -> Scene:
    if scene_flag is None:
        return Scene(spheres=())
    path = Path(scene_flag)
    if path.exists():
        return load_scene(path)
    try:
        return load_scene(scene_path(scene_flag))
    except KeyError:
        _fail(f"scene '{scene_flag}' is neither a file nor a packaged scene")


def _thresholds_from(config: dict) -> EvalThresholds:
    e = config["eval"]
    return EvalThresholds(pos_tol=e["pos_tol"], ori_tol_deg=e["ori_tol_deg"],
                          max_joint_step=e["max_joint_step"],
                          safe_distance=e["safe_distance"],
                          densify_step=e["densify_step"])


def _load_models(config: dict, diffusion_path: str | None, cae_path: str | None,
                 robot) -> LoadedModels:
    models = LoadedModels()
    if cae_path:
        models.cae = CaeModel.load(cae_path)
    if diffusion_path:
        if models.cae is None:
            _fail("--model requires --cae for condition encoding")
        models.diffusion = TrajectoryDiffusion.load(diffusion_path, robot)
        if models.diffusion.cae_checksum and \
                models.diffusion.cae_checksum != models.cae.checksum:
            _fail("diffusion checkpoint was trained with a different encoder "
                  "(CAE checksum mismatch)")
    return models


@click.group()
def main() -> None:
    """Motion-planning workbench: dataset, training, planning, evaluation."""


@main.command("gen-dataset")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--n", "n_records", type=int, default=None, help="record count")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), required=True)
@click.option("--workers", type=int, default=None)
@click.option("--robot", "robot_flag", default=None)
def gen_dataset(config_path, n_records, seed, out, workers, robot_flag):
    """Generate a planning dataset with the shared-tree pipeline."""
    config = load_config(config_path)
    d = config["dataset"]
    n = n_records if n_records is not None else d["n_records"]
    seed = seed if seed is not None else d["seed"]
    workers = workers if workers is not None else d["workers"]
    model, robot_file = _robot_from(config, robot_flag)
    spec = SceneSpec(n_spheres=tuple(d["n_spheres"]), radius=tuple(d["radius"]),
                     bounds_min=tuple(d["bounds_min"]), bounds_max=tuple(d["bounds_max"]),
                     base_keepout=d["base_keepout"])
    p = config["planner"]
    cfg = PlannerConfig(step_size=p["step_size"], goal_bias=p["goal_bias"],
                        max_iters=d["gen_max_iters"], rewire_gamma=p["rewire_gamma"],
                        clearance=p["clearance"], seed=seed,
                        shortcut_passes=d["gen_shortcut_passes"],
                        max_neighbors=p["max_neighbors"])
    try:
        manifest = generate_dataset(model, robot_file, n, spec, cfg, out, seed=seed,
                                    frames=d["frames"], workers=workers, progress=True)
    except Exception as exc:
        _fail(f"dataset generation failed: {exc}")
    click.echo(json.dumps({"out": str(out), "records": manifest["counts"]["records"],
                           "attempts": manifest["counts"]["attempts"]}))


@main.command("train-cae")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--steps", type=int, default=None, help="override epoch-based budget")
@click.option("--seed", type=int, default=None)
def train_cae_cmd(config_path, dataset_path, out, steps, seed):
    """Pretrain and freeze the obstacle point-cloud encoder."""
    config = load_config(config_path)
    c = config["cae"]
    try:
        records, _ = load_dataset(dataset_path)
        clouds = np.stack([
            sample_point_cloud(rec.scene, c["cloud_points"], seed=c["cloud_seed"]).flat()
            for rec in records])
        cae_cfg = CaeConfig(input_dim=c["input_dim"], hidden=tuple(c["hidden"]),
                            latent_dim=c["latent_dim"], lambda_reg=c["lambda_reg"],
                            epochs=c["epochs"], batch=c["batch"], lr=c["lr"],
                            seed=seed if seed is not None else c["seed"])
        model = train_cae(cae_cfg, clouds, steps=steps, log_every=200)
        model.save(out)
    except Exception as exc:
        _fail(f"encoder training failed: {exc}")
    click.echo(json.dumps({"out": str(out), "checksum": model.checksum,
                           "clouds": len(clouds)}))


@main.command("train-diffusion")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--cae", "cae_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--steps", type=int, default=None)
@click.option("--layers", type=int, default=None)
@click.option("--width", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--robot", "robot_flag", default=None)
def train_diffusion_cmd(config_path, dataset_path, cae_path, out, steps, layers,
                        width, seed, robot_flag):
    """Train the trajectory diffusion model on a dataset."""
    config = load_config(config_path)
    dcfg = config["diffusion"]
    model, _ = _robot_from(config, robot_flag)
    try:
        records, manifest = load_dataset(dataset_path)
        cae = CaeModel.load(cae_path)
        examples = build_examples(records, cae,
                                  cloud_seed=config["cae"]["cloud_seed"],
                                  k_points=config["cae"]["cloud_points"])
        den_cfg = DenoiserConfig(
            layers=layers if layers is not None else dcfg["layers"],
            width=width if width is not None else dcfg["width"],
            heads=dcfg["heads"], frames=manifest.get("frames_per_trajectory",
                                                     dcfg["frames"]),
            dof=model.dof, dropout=dcfg["dropout"],
            latent_dim=config["cae"]["latent_dim"], ffn_mult=dcfg["ffn_mult"])
        schedule = NoiseSchedule.linear(dcfg["t_steps"], dcfg["beta_start"],
                                        dcfg["beta_end"])
        weights = LossWeights(**dcfg["loss_weights"])
        tcfg = TrainConfig(steps=steps if steps is not None else dcfg["steps"],
                           batch=dcfg["batch"], lr=dcfg["lr"],
                           seed=seed if seed is not None else dcfg["seed"],
                           log_every=500)
        _, log = train(tcfg, examples, cae, model, schedule, weights,
                       p_mask=dcfg["p_mask"], denoiser_config=den_cfg, out_path=out)
    except Exception as exc:
        _fail(f"diffusion training failed: {exc}")
    Path(str(out) + ".trainlog.json").write_text(json.dumps(
        {"losses": log["losses"][::10], "masked": log["masked_conditions"],
         "total": log["total_conditions"]}))
    click.echo(json.dumps({"out": str(out), "steps": tcfg.steps,
                           "final_loss": float(np.mean(log["losses"][-50:]))}))


@main.command("plan")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--method", type=click.Choice(METHODS), default="shared_tree")
@click.option("--scene", "scene_flag", default=None, help="scene file or packaged name")
@click.option("--start", "start_text", required=True, help="comma-separated config")
@click.option("--goal", "goal_text", required=True, help="comma-separated config")
@click.option("--out", type=click.Path(), default="trajectory.json")
@click.option("--seed", type=int, default=0)
@click.option("--budget", "budget_s", type=float, default=60.0)
@click.option("--model", "diffusion_path", type=click.Path(exists=True), default=None)
@click.option("--cae", "cae_path", type=click.Path(exists=True), default=None)
@click.option("--robot", "robot_flag", default=None)
def plan_cmd(config_path, method, scene_flag, start_text, goal_text, out, seed,
             budget_s, diffusion_path, cae_path, robot_flag):
    """Plan one trajectory, print its metrics, and write the trajectory file."""
    config = load_config(config_path)
    model, _ = _robot_from(config, robot_flag)
    scene = _scene_from(config, scene_flag)
    q_init = _parse_qvec(start_text, model.dof, "--start")
    q_goal = _parse_qvec(goal_text, model.dof, "--goal")
    models = _load_models(config, diffusion_path, cae_path, model)
    if method == "diffusion" and models.diffusion is None:
        _fail("method 'diffusion' needs --model and --cae checkpoints")
    task = Task(scene=scene, q_init=q_init, q_goal=q_goal)
    import time as _time
    start = _time.perf_counter()
    try:
        output = run_method(method, task, model, config, seed, budget_s, models)
    except Exception as exc:
        _fail(f"planning failed: {exc}")
    elapsed = _time.perf_counter() - start
    record = evaluate(output.trajectory, task, model, _thresholds_from(config),
                      wall_time=elapsed)
    payload = {
        "robot": model.name,
        "method": method,
        "seed": seed,
        "scene": scene.to_dict(),
        "q_init": [float(v) for v in q_init],
        "q_goal": [float(v) for v in q_goal],
        "frames": [[float(v) for v in q] for q in output.trajectory],
        "metrics": record.to_dict(),
    }
    Path(out).write_text(json.dumps(payload, indent=1))
    click.echo(json.dumps(record.to_dict()))
    if not record.success:
        sys.exit(2)


@main.command("eval")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--trajectory", "traj_path", type=click.Path(exists=True), required=True)
def eval_cmd(config_path, traj_path):
    """Re-evaluate a stored trajectory file."""
    config = load_config(config_path)
    try:
        payload = json.loads(Path(traj_path).read_text())
        model, _ = _robot_from(config, payload["robot"])
        task = Task(scene=Scene.from_dict(payload["scene"]),
                    q_init=np.asarray(payload["q_init"]),
                    q_goal=np.asarray(payload["q_goal"]))
        record = evaluate(np.asarray(payload["frames"], dtype=float), task, model,
                          _thresholds_from(config))
    except Exception as exc:
        _fail(f"evaluation failed: {exc}")
    click.echo(json.dumps(record.to_dict()))


@main.command("bench")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--tasks", "tasks_path", type=click.Path(exists=True), default=None)
@click.option("--from-dataset", "dataset_path", type=click.Path(exists=True), default=None)
@click.option("--first-n", type=int, default=None, help="limit tasks from the dataset")
@click.option("--methods", "methods_text", default="rrt_star,informed,shared_tree")
@click.option("--budget", "budget_s", type=float, default=60.0)
@click.option("--out-dir", type=click.Path(), default="bench_out")
@click.option("--seed", type=int, default=0)
@click.option("--model", "diffusion_path", type=click.Path(exists=True), default=None)
@click.option("--cae", "cae_path", type=click.Path(exists=True), default=None)
@click.option("--robot", "robot_flag", default=None)
def bench_cmd(config_path, tasks_path, dataset_path, first_n, methods_text, budget_s,
              out_dir, seed, diffusion_path, cae_path, robot_flag):
    """Benchmark planners over a task set; write report, table, and curves."""
    config = load_config(config_path)
    model, _ = _robot_from(config, robot_flag)
    tasks: list[Task] = []
    if tasks_path:
        raw = json.loads(Path(tasks_path).read_text())
        for item in raw["tasks"]:
            tasks.append(Task(scene=Scene.from_dict(item["scene"]),
                              q_init=np.asarray(item["q_init"], dtype=float),
                              q_goal=np.asarray(item["q_goal"], dtype=float)))
    elif dataset_path:
        records, _ = load_dataset(dataset_path)
        if first_n:
            records = records[:first_n]
        tasks = [Task(scene=r.scene, q_init=r.q_init, q_goal=r.q_goal)
                 for r in records]
    if not tasks:
        _fail("no tasks: provide --tasks or --from-dataset with a non-empty set")
    methods = [m.strip() for m in methods_text.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            _fail(f"unknown method '{m}'")
    models = _load_models(config, diffusion_path, cae_path, model)
    if "diffusion" in methods and models.diffusion is None:
        _fail("method 'diffusion' needs --model and --cae checkpoints")
    planners = {m: make_benchmark_planner(m, model, config, models) for m in methods}
    report = run_benchmark(planners, tasks, model, budget_s,
                           _thresholds_from(config), seed=seed, progress=True)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1))
    (out / "table.txt").write_text(report.text_table() + "\n")
    for m in methods:
        (out / f"curve_{m}.csv").write_text(report.curves_csv(m) + "\n")
    click.echo(report.text_table())


@main.command("serve")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--port", type=int, default=None)
@click.option("--host", default=None)
@click.option("--model", "diffusion_path", type=click.Path(exists=True), default=None)
@click.option("--cae", "cae_path", type=click.Path(exists=True), default=None)
@click.option("--job-log", default=None)
@click.option("--frontend", "frontend_dir", default=None,
              help="directory with the built web workbench")
def serve_cmd(config_path, port, host, diffusion_path, cae_path, job_log, frontend_dir):
    """Run the HTTP planning service."""
    import os

    import uvicorn

    from .service import create_app

    config = load_config(config_path)
    model, _ = _robot_from(config, None)
    models = _load_models(config, diffusion_path, cae_path, model)
    app = create_app(config, models,
                     job_log=job_log or config["serve"]["job_log"],
                     frontend_dir=frontend_dir)
    bind_host = host or os.environ.get("ARMPLAN_HOST") or config["serve"]["host"]
    bind_port = port or int(os.environ.get("ARMPLAN_PORT", 0)) or config["serve"]["port"]
    uvicorn.run(app, host=bind_host, port=bind_port, log_level="info")


if __name__ == "__main__":
    main()
