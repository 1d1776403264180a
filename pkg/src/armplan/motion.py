"""Trajectory utilities shared by planners and evaluation: densification,
arc length, and per-configuration workspace clearance."""

from __future__ import annotations

import numpy as np

from .kinematics import RobotModel, fk_points
from .world import Scene

DENSIFY_STEP = 0.01  # rad, max per-joint step for collision densification


def densify(frames: np.ndarray, max_step: float = DENSIFY_STEP) -> np.ndarray:
    """Insert linear intermediates so consecutive per-joint steps are <= max_step.

    Original frames are preserved; a single frame passes through unchanged.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=float))
    if frames.shape[0] < 2:
        return frames
    out = [frames[:1]]
    for a, b in zip(frames[:-1], frames[1:]):
        span = float(np.max(np.abs(b - a)))
        n = max(1, int(np.ceil(span / max_step)))
        ts = np.linspace(0.0, 1.0, n + 1)[1:, None]
        out.append(a[None, :] + ts * (b - a)[None, :])
    return np.concatenate(out, axis=0)


def arc_length(frames: np.ndarray) -> float:
    """Config-space arc length: sum of Euclidean steps between frames."""
    frames = np.atleast_2d(np.asarray(frames, dtype=float))
    if frames.shape[0] < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(frames, axis=0), axis=1)))


def max_joint_step(frames: np.ndarray) -> float:
    """Largest per-joint move between consecutive frames."""
    frames = np.atleast_2d(np.asarray(frames, dtype=float))
    if frames.shape[0] < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(frames, axis=0))))


def configs_clearance(model: RobotModel, scene: Scene, configs: np.ndarray) -> np.ndarray:
    """Min signed distance of each configuration's link points to the scene.

    Returns +inf per config for obstacle-free scenes without computing FK.
    """
    configs = np.atleast_2d(np.asarray(configs, dtype=float))
    m = configs.shape[0]
    if not scene.spheres:
        return np.full(m, np.inf)
    pts = fk_points(model, configs)  # (M, K, 3)
    diff = pts[:, :, None, :] - scene.centers[None, None, :, :]
    d = np.linalg.norm(diff, axis=3) - scene.radii[None, None, :]
    return d.min(axis=(1, 2))
