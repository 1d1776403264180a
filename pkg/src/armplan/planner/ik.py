"""Damped-least-squares inverse kinematics with random restarts.

Targets are full end-effector poses; redundant arms yield multiple distinct
solutions, which is what the multi-goal planners consume.  The DLS inner loop
uses a scalar FK/Jacobian evaluation: single-configuration chains are much
cheaper in plain Python than as batch-of-one array ops.
"""

from __future__ import annotations

import math

import numpy as np

from ..kinematics import LinkPose, RobotModel
from ..motion import configs_clearance
from ..world import Scene
from .base import GoalSet

POS_TOL = 1e-3          # meters
ORI_TOL = np.deg2rad(0.5)
DUPLICATE_TOL = 1e-2    # rad, max-norm


class UnreachableTargetError(RuntimeError):
    """No IK solution found within the restart budget."""


def _chain_constants(model: RobotModel) -> list[tuple[float, float, float, float, float]]:
    return [(j.dh_a, j.dh_d, math.cos(j.dh_alpha), math.sin(j.dh_alpha), j.theta_offset)
            for j in model.joints]


def _fk_scalar(consts, q):
    """All link frames as flat tuples: list of (9-float rotation, 3-float origin)."""
    r00, r01, r02 = 1.0, 0.0, 0.0
    r10, r11, r12 = 0.0, 1.0, 0.0
    r20, r21, r22 = 0.0, 0.0, 1.0
    ox, oy, oz = 0.0, 0.0, 0.0
    frames = [((r00, r01, r02, r10, r11, r12, r20, r21, r22), (ox, oy, oz))]
    for (a_len, d_len, ca, sa, off), qi in zip(consts, q):
        th = qi + off
        ct, st = math.cos(th), math.sin(th)
        s01, s02 = -st * ca, st * sa
        s11, s12 = ct * ca, -ct * sa
        tx, ty, tz = a_len * ct, a_len * st, d_len
        ox += r00 * tx + r01 * ty + r02 * tz
        oy += r10 * tx + r11 * ty + r12 * tz
        oz += r20 * tx + r21 * ty + r22 * tz
        n00 = r00 * ct + r01 * st
        n01 = r00 * s01 + r01 * s11 + r02 * sa
        n02 = r00 * s02 + r01 * s12 + r02 * ca
        n10 = r10 * ct + r11 * st
        n11 = r10 * s01 + r11 * s11 + r12 * sa
        n12 = r10 * s02 + r11 * s12 + r12 * ca
        n20 = r20 * ct + r21 * st
        n21 = r20 * s01 + r21 * s11 + r22 * sa
        n22 = r20 * s02 + r21 * s12 + r22 * ca
        r00, r01, r02, r10, r11, r12, r20, r21, r22 = \
            n00, n01, n02, n10, n11, n12, n20, n21, n22
        frames.append(((r00, r01, r02, r10, r11, r12, r20, r21, r22), (ox, oy, oz)))
    return frames


def _error_and_jacobian(consts, q, tgt_r, tgt_p):
    """Pose error twist, position/angle error magnitudes, and the 6xD Jacobian."""
    frames = _fk_scalar(consts, q)
    rot, tip = frames[-1]
    r00, r01, r02, r10, r11, r12, r20, r21, r22 = rot
    t = tgt_r
    e_pos = (tgt_p[0] - tip[0], tgt_p[1] - tip[1], tgt_p[2] - tip[2])
    # 0.5 * sum of column cross products: world-frame orientation error
    ex = ey = ez = 0.0
    for (ax, ay, az), (bx, by, bz) in (
            ((r00, r10, r20), (t[0, 0], t[1, 0], t[2, 0])),
            ((r01, r11, r21), (t[0, 1], t[1, 1], t[2, 1])),
            ((r02, r12, r22), (t[0, 2], t[1, 2], t[2, 2]))):
        ex += ay * bz - az * by
        ey += az * bx - ax * bz
        ez += ax * by - ay * bx
    err = np.array([e_pos[0], e_pos[1], e_pos[2], 0.5 * ex, 0.5 * ey, 0.5 * ez])
    trace = (r00 * t[0, 0] + r10 * t[1, 0] + r20 * t[2, 0]
             + r01 * t[0, 1] + r11 * t[1, 1] + r21 * t[2, 1]
             + r02 * t[0, 2] + r12 * t[1, 2] + r22 * t[2, 2])
    ang = math.acos(min(1.0, max(-1.0, (trace - 1.0) / 2.0)))
    pos = math.sqrt(e_pos[0] ** 2 + e_pos[1] ** 2 + e_pos[2] ** 2)

    dof = len(consts)
    jac = np.empty((6, dof))
    for j in range(dof):
        rj, oj = frames[j]
        zx, zy, zz = rj[2], rj[5], rj[8]
        rx, ry, rz = tip[0] - oj[0], tip[1] - oj[1], tip[2] - oj[2]
        jac[0, j] = zy * rz - zz * ry
        jac[1, j] = zz * rx - zx * rz
        jac[2, j] = zx * ry - zy * rx
        jac[3, j] = zx
        jac[4, j] = zy
        jac[5, j] = zz
    return err, pos, ang, jac


def _dls_solve(model: RobotModel, consts, q0: np.ndarray, target: LinkPose,
               iters: int, damping: float) -> np.ndarray | None:
    q = q0.copy()
    lam2 = damping ** 2
    eye6 = np.eye(6)
    lo, hi = model.limits_lo, model.limits_hi
    tgt_r, tgt_p = target.rotation, target.translation
    for _ in range(iters):
        err, pos, ang, jac = _error_and_jacobian(consts, q, tgt_r, tgt_p)
        if pos < POS_TOL and ang < ORI_TOL:
            return q
        dq = jac.T @ np.linalg.solve(jac @ jac.T + lam2 * eye6, err)
        step = float(np.max(np.abs(dq)))
        if step > 0.3:
            dq *= 0.3 / step
        q = np.clip(q + dq, lo, hi)
    err, pos, ang, _ = _error_and_jacobian(consts, q, tgt_r, tgt_p)
    if pos < POS_TOL and ang < ORI_TOL:
        return q
    return None


def ik_solve(model: RobotModel, target_pose: LinkPose, n: int, seed: int,
             scene: Scene | None = None, clearance: float = 0.05,
             max_restarts: int = 50, iters: int = 300,
             damping: float = 1e-2) -> GoalSet:
    """Collect up to n distinct joint solutions reaching the target pose.

    Solutions must be within joint limits, mutually distinct (max-norm
    >= DUPLICATE_TOL), and, when a scene is given, keep the clearance margin.
    Raises UnreachableTargetError if the restart budget yields nothing.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    lo, hi = model.limits_lo, model.limits_hi
    mid = (lo + hi) / 2.0
    zero = model.clamp(np.zeros(model.dof))
    check_scene = scene if scene is not None else Scene(spheres=())
    consts = _chain_constants(model)

    solutions: list[np.ndarray] = []
    for attempt in range(max_restarts):
        if attempt == 0:
            q0 = zero
        elif attempt == 1:
            q0 = mid
        else:
            q0 = rng.uniform(lo, hi)
        q = _dls_solve(model, consts, q0, target_pose, iters, damping)
        if q is None or not model.within_limits(q):
            continue
        if float(configs_clearance(model, check_scene, q)[0]) < clearance:
            continue
        if any(np.max(np.abs(q - s)) < DUPLICATE_TOL for s in solutions):
            continue
        solutions.append(q)
        if len(solutions) >= n:
            break
    if not solutions:
        raise UnreachableTargetError(
            f"no IK solution for target at {np.round(target_pose.translation, 4)} "
            f"after {max_restarts} restarts")
    return GoalSet(configs=tuple(solutions))
