"""Serial-chain robot models and differentiable forward kinematics.

Robots are described by classic (distal) Denavit-Hartenberg parameters, one
row per revolute joint, plus authored per-link surface sample points used for
workspace collision reasoning.  All operations are pure functions of immutable
inputs and accept either a single configuration ``(D,)`` or a batch ``(B, D)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class RobotLoadError(ValueError):
    """Raised when a robot description file is missing, malformed, or invalid."""


@dataclass(frozen=True)
class JointSpec:
    """One revolute joint: DH row (a, d, alpha), angle offset, and limits (rad)."""

    dh_a: float
    dh_d: float
    dh_alpha: float
    theta_offset: float
    limit_lo: float
    limit_hi: float

    def validate(self) -> None:
        vals = (self.dh_a, self.dh_d, self.dh_alpha, self.theta_offset,
                self.limit_lo, self.limit_hi)
        if not all(math.isfinite(v) for v in vals):
            raise RobotLoadError(f"non-finite joint parameter in {self}")
        if not self.limit_lo < self.limit_hi:
            raise RobotLoadError(
                f"joint limits must satisfy lo < hi, got [{self.limit_lo}, {self.limit_hi}]")


@dataclass(frozen=True)
class RobotModel:
    """Kinematic chain: joint parameters plus link-local surface sample points.

    ``link_points[i]`` holds the sample points rigidly attached to link frame
    ``i+1`` (the frame produced by joint ``i+1``), expressed in that frame.
    """

    name: str
    dof: int
    joints: tuple[JointSpec, ...]
    link_points: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if self.dof < 1:
            raise RobotLoadError(f"dof must be >= 1, got {self.dof}")
        if len(self.joints) != self.dof:
            raise RobotLoadError(
                f"expected {self.dof} joints, got {len(self.joints)}")
        if len(self.link_points) != self.dof:
            raise RobotLoadError(
                f"expected link point sets for {self.dof} links, got {len(self.link_points)}")
        for spec in self.joints:
            spec.validate()
        for i, pts in enumerate(self.link_points):
            if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
                raise RobotLoadError(
                    f"link {i + 1} sample points must be a non-empty (k, 3) array")
            if not np.all(np.isfinite(pts)):
                raise RobotLoadError(f"link {i + 1} sample points contain non-finite values")

    @property
    def n_points(self) -> int:
        """Total surface sample points across all links."""
        return sum(p.shape[0] for p in self.link_points)

    @property
    def limits_lo(self) -> np.ndarray:
        return np.array([j.limit_lo for j in self.joints])

    @property
    def limits_hi(self) -> np.ndarray:
        return np.array([j.limit_hi for j in self.joints])

    def within_limits(self, q: np.ndarray, tol: float = 0.0) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= self.limits_lo - tol) and np.all(q <= self.limits_hi + tol))

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(q, dtype=float), self.limits_lo, self.limits_hi)

    # Flat (n_points, 3) array of link-local points and the link index of each
    # point (1-based frame index), cached lazily for batched FK.
    def _point_table(self) -> tuple[np.ndarray, np.ndarray]:
        cached = getattr(self, "_pt_cache", None)
        if cached is None:
            local = np.concatenate(self.link_points, axis=0).astype(float)
            owner = np.repeat(np.arange(1, self.dof + 1),
                              [p.shape[0] for p in self.link_points])
            cached = (local, owner)
            object.__setattr__(self, "_pt_cache", cached)
        return cached


@dataclass(frozen=True)
class LinkPose:
    """Rigid pose of one link frame: rotation (3x3, det +1) and translation (m)."""

    rotation: np.ndarray
    translation: np.ndarray


def load_robot(path: str | Path) -> RobotModel:
    """Load and validate a robot description JSON file.

    Schema: ``{name, dof, joints: [{a, d, alpha, theta_offset, limit_lo,
    limit_hi}], link_points: [[[x, y, z], ...], ...]}`` with meters/radians.
    """
    path = Path(path)
    if not path.exists():
        raise RobotLoadError(f"robot description not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise RobotLoadError(f"robot description is not valid JSON: {path}: {exc}") from exc
    try:
        joints = tuple(
            JointSpec(
                dh_a=float(j["a"]),
                dh_d=float(j["d"]),
                dh_alpha=float(j["alpha"]),
                theta_offset=float(j["theta_offset"]),
                limit_lo=float(j["limit_lo"]),
                limit_hi=float(j["limit_hi"]),
            )
            for j in raw["joints"]
        )
        link_points = tuple(np.asarray(p, dtype=float).reshape(-1, 3)
                            for p in raw["link_points"])
        model = RobotModel(name=str(raw["name"]), dof=int(raw["dof"]),
                           joints=joints, link_points=link_points)
    except RobotLoadError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise RobotLoadError(f"malformed robot description {path}: {exc}") from exc
    return model


def _check_config(model: RobotModel, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != model.dof:
        raise ValueError(f"configuration has {q.shape[-1]} entries, model dof is {model.dof}")
    if not np.all(np.isfinite(q)):
        raise ValueError("configuration contains non-finite entries")
    return q


def _frames_batch(model: RobotModel, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All link frames for a batch of configurations.

    Returns rotations ``(B, D+1, 3, 3)`` and origins ``(B, D+1, 3)``; frame 0
    is the fixed base.
    """
    q = np.atleast_2d(q)
    b, d = q.shape
    rots = np.empty((b, d + 1, 3, 3))
    orgs = np.empty((b, d + 1, 3))
    rots[:, 0] = np.eye(3)
    orgs[:, 0] = 0.0
    for i, spec in enumerate(model.joints):
        th = q[:, i] + spec.theta_offset
        ct, st = np.cos(th), np.sin(th)
        ca, sa = math.cos(spec.dh_alpha), math.sin(spec.dh_alpha)
        a_len, d_len = spec.dh_a, spec.dh_d
        # Classic DH link transform Rz(theta) Tz(d) Tx(a) Rx(alpha).
        step_r = np.empty((b, 3, 3))
        step_r[:, 0, 0] = ct
        step_r[:, 0, 1] = -st * ca
        step_r[:, 0, 2] = st * sa
        step_r[:, 1, 0] = st
        step_r[:, 1, 1] = ct * ca
        step_r[:, 1, 2] = -ct * sa
        step_r[:, 2, 0] = 0.0
        step_r[:, 2, 1] = sa
        step_r[:, 2, 2] = ca
        step_t = np.stack([a_len * ct, a_len * st, np.full(b, d_len)], axis=-1)
        orgs[:, i + 1] = orgs[:, i] + np.matmul(rots[:, i], step_t[:, :, None])[:, :, 0]
        rots[:, i + 1] = np.matmul(rots[:, i], step_r)
    return rots, orgs


def forward_kinematics(model: RobotModel, q: np.ndarray) -> list[LinkPose]:
    """Pose of every link frame (base included, length D+1) for one config."""
    q = _check_config(model, q)
    if q.ndim != 1:
        raise ValueError("forward_kinematics takes a single configuration")
    rots, orgs = _frames_batch(model, q)
    return [LinkPose(rotation=rots[0, i].copy(), translation=orgs[0, i].copy())
            for i in range(model.dof + 1)]


def fk_points(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """Workspace positions of all link sample points, link-major order.

    Accepts ``(D,)`` or ``(B, D)`` and returns ``(K, 3)`` or ``(B, K, 3)``.
    """
    q = _check_config(model, q)
    single = q.ndim == 1
    rots, orgs = _frames_batch(model, q)
    pts = _points_world(model, rots, orgs)
    return pts[0] if single else pts


def _points_world(model: RobotModel, rots: np.ndarray, orgs: np.ndarray) -> np.ndarray:
    b = rots.shape[0]
    pts = np.empty((b, model.n_points, 3))
    col = 0
    for i, local in enumerate(model.link_points):
        k = local.shape[0]
        pts[:, col:col + k] = (np.matmul(rots[:, i + 1], local.T).transpose(0, 2, 1)
                               + orgs[:, i + 1, None, :])
        col += k
    return pts


def fk_points_jacobian(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """Analytic Jacobian of ``fk_points`` coordinates w.r.t. joint angles.

    Returns ``(3*K, D)`` for a single config or ``(B, 3*K, D)`` for a batch,
    rows ordered like the flattened ``fk_points`` output.
    """
    q = _check_config(model, q)
    single = q.ndim == 1
    rots, orgs = _frames_batch(model, q)
    b = rots.shape[0]
    _, owner = model._point_table()
    k = owner.size
    pts = _points_world(model, rots, orgs)

    # Revolute chain: d p / d q_j = z_{j-1} x (p - o_{j-1}) for joints j <= owner.
    axes = rots[:, :-1, :, 2]          # (B, D, 3) joint axes z_{j-1}
    origins = orgs[:, :-1]             # (B, D, 3) joint origins o_{j-1}
    rel = pts[:, :, None, :] - origins[:, None, :, :]       # (B, K, D, 3)
    col = np.cross(axes[:, None, :, :], rel)                # (B, K, D, 3)
    mask = np.arange(1, model.dof + 1)[None, :] <= owner[:, None]  # (K, D)
    col = col * mask[None, :, :, None]
    jac = col.transpose(0, 1, 3, 2).reshape(b, 3 * k, model.dof)
    return jac[0] if single else jac


def frame_origins(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """Link-frame origins (base included): ``(D+1, 3)`` or ``(B, D+1, 3)``."""
    q = _check_config(model, q)
    single = q.ndim == 1
    _, orgs = _frames_batch(model, q)
    return orgs[0] if single else orgs


def end_effector_pose(model: RobotModel, q: np.ndarray) -> LinkPose:
    """Pose of the final link frame for one configuration."""
    return forward_kinematics(model, q)[-1]


def geometric_jacobian(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """6xD geometric Jacobian of the end-effector frame (linear; angular)."""
    q = _check_config(model, q)
    if q.ndim != 1:
        raise ValueError("geometric_jacobian takes a single configuration")
    rots, orgs = _frames_batch(model, q)
    tip = orgs[0, -1]
    axes = rots[0, :-1, :, 2]
    origins = orgs[0, :-1]
    jac = np.zeros((6, model.dof))
    jac[:3] = np.cross(axes, tip[None, :] - origins).T
    jac[3:] = axes.T
    return jac


def rotation_angle(r_a: np.ndarray, r_b: np.ndarray) -> float:
    """Relative rotation angle between two orientation matrices, radians."""
    tr = np.trace(r_a.T @ r_b)
    return float(np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0)))
