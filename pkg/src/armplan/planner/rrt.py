"""RRT*-family planners over joint space: plain, informed, and a multi-goal
shared-tree variant.

One tree engine backs all three entry points.  Every accepted node and every
densified edge point must keep at least the configured workspace clearance
(node security defense); informed sampling draws from the prolate
hyperellipsoid of configurations that could still improve the incumbent.
"""

from __future__ import annotations

import time

import numpy as np

from ..kinematics import RobotModel
from ..motion import DENSIFY_STEP, configs_clearance
from ..world import Scene
from .base import GoalSet, Path, PlannerConfig, PlanningError, PlanTrace

_TIME_CHECK_EVERY = 128


def _ball_sample(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Uniform draw from the unit dim-ball."""
    vec = rng.standard_normal(dim)
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        vec = np.zeros(dim)
        vec[0] = 1.0
        norm = 1.0
    return vec / norm * rng.random() ** (1.0 / dim)


def _rotation_to_segment(direction: np.ndarray) -> np.ndarray:
    """Rotation matrix whose first column is the given unit direction."""
    dim = direction.size
    m = np.outer(direction, np.eye(dim)[0])
    u, _, vt = np.linalg.svd(m)
    diag = np.ones(dim)
    diag[-1] = np.linalg.det(u) * np.linalg.det(vt)
    return u @ np.diag(diag) @ vt


def _informed_draw(rng: np.random.Generator, center: np.ndarray, rot: np.ndarray,
                   c_min: float, c_best: float, lo: np.ndarray | None,
                   hi: np.ndarray | None, max_tries: int = 32) -> np.ndarray:
    dim = center.size
    radii = np.full(dim, np.sqrt(max(c_best ** 2 - c_min ** 2, 0.0)) / 2.0)
    radii[0] = c_best / 2.0
    sample = center
    for _ in range(max_tries):
        sample = center + rot @ (radii * _ball_sample(rng, dim))
        if lo is None or (np.all(sample >= lo) and np.all(sample <= hi)):
            return sample
    return np.clip(sample, lo, hi)


def sample_informed(rng: np.random.Generator, start: np.ndarray, goal: np.ndarray,
                    c_best: float, lo: np.ndarray | None = None,
                    hi: np.ndarray | None = None, max_tries: int = 32) -> np.ndarray:
    """Uniform sample from the prolate hyperellipsoid {x : |x-start| + |x-goal| <= c_best}.

    Samples violating the optional joint-limit box are redrawn; after
    max_tries the final draw is clipped to the box.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    c_min = float(np.linalg.norm(goal - start))
    if c_best <= c_min + 1e-12:
        return start + rng.random() * (goal - start)
    rot = _rotation_to_segment((goal - start) / c_min)
    return _informed_draw(rng, (start + goal) / 2.0, rot, c_min, c_best,
                          lo, hi, max_tries)


class _Tree:
    """Array-backed search tree with parent/children links and cost-to-come."""

    def __init__(self, root: np.ndarray, capacity: int):
        dim = root.size
        self.coords = np.empty((capacity, dim))
        self.parent = np.full(capacity, -1, dtype=np.int64)
        self.cost = np.zeros(capacity)
        self.children: list[list[int]] = [[] for _ in range(capacity)]
        self.coords[0] = root
        self.n = 1

    def add(self, q: np.ndarray, parent: int, edge_len: float) -> int:
        idx = self.n
        self.coords[idx] = q
        self.parent[idx] = parent
        self.cost[idx] = self.cost[parent] + edge_len
        self.children[parent].append(idx)
        self.n += 1
        return idx

    def reparent(self, node: int, new_parent: int, new_cost: float) -> None:
        old = self.parent[node]
        if old >= 0:
            self.children[old].remove(node)
        self.parent[node] = new_parent
        self.children[new_parent].append(node)
        self.cost[node] = new_cost
        # propagate the improvement through the subtree
        stack = list(self.children[node])
        while stack:
            child = stack.pop()
            self.cost[child] = self.cost[self.parent[child]] + float(
                np.linalg.norm(self.coords[child] - self.coords[self.parent[child]]))
            stack.extend(self.children[child])

    def path_to(self, node: int) -> list[np.ndarray]:
        out = [self.coords[node].copy()]
        while self.parent[node] >= 0:
            node = self.parent[node]
            out.append(self.coords[node].copy())
        return out[::-1]


def _edges_feasible(model: RobotModel, scene: Scene, starts: np.ndarray,
                    ends: np.ndarray, clearance: float) -> np.ndarray:
    """Clearance feasibility of straight edges, densified at DENSIFY_STEP.

    Edge start points are assumed already validated; intermediate points and
    the end point are checked in one batched FK call.
    """
    n_edges = starts.shape[0]
    if n_edges == 0:
        return np.zeros(0, dtype=bool)
    if not scene.spheres:
        return np.ones(n_edges, dtype=bool)
    spans = np.max(np.abs(ends - starts), axis=1)
    counts = np.maximum(1, np.ceil(spans / DENSIFY_STEP).astype(int))
    total = int(counts.sum())
    owner = np.repeat(np.arange(n_edges), counts)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    pos = np.arange(total) - offsets[owner] + 1
    t = (pos / counts[owner])[:, None]
    configs = starts[owner] + t * (ends[owner] - starts[owner])
    clear = configs_clearance(model, scene, configs)
    ok_pt = clear >= clearance
    return np.minimum.reduceat(ok_pt, offsets).astype(bool)


def _grow_tree(model: RobotModel, scene: Scene, q_init: np.ndarray, goals: GoalSet,
               cfg: PlannerConfig, informed: bool,
               idle_stop: int | None = None) -> tuple[_Tree, dict[int, int], PlanTrace]:
    """Grow one RRT* tree from q_init toward every goal configuration.

    Returns the tree, a map goal index -> goal node id (reached goals only),
    and the per-iteration trace.  ``idle_stop`` optionally ends the run once
    all reachable goals are connected and the incumbent has not improved for
    that many iterations.
    """
    start_t = time.perf_counter()
    q_init = np.asarray(q_init, dtype=float)
    dim = model.dof
    lo, hi = model.limits_lo, model.limits_hi
    rng = np.random.default_rng(cfg.seed)

    if not model.within_limits(q_init):
        raise PlanningError("start configuration violates joint limits")
    if float(configs_clearance(model, scene, q_init)[0]) < cfg.clearance:
        raise PlanningError("start configuration violates the clearance margin")

    goal_arr = np.stack(goals.configs)
    goal_valid = np.array([model.within_limits(g) for g in goals.configs])
    goal_valid &= configs_clearance(model, scene, goal_arr) >= cfg.clearance
    if not np.any(goal_valid):
        raise PlanningError("every goal configuration violates limits or clearance")

    capacity = cfg.max_iters + len(goals) + 1
    tree = _Tree(q_init, capacity)
    goal_node = np.full(len(goals), -1, dtype=np.int64)
    trace = PlanTrace(best_costs=np.full(cfg.max_iters, np.inf))
    best = np.inf
    last_improve = 0
    rr_goal_bias = 0
    rr_informed = 0

    # informed-ellipsoid geometry is fixed per goal; compute rotations once
    ell_c_min = np.linalg.norm(goal_arr - q_init, axis=1)
    ell_center = (goal_arr + q_init) / 2.0
    ell_rot = [
        _rotation_to_segment((goal_arr[g] - q_init) / ell_c_min[g])
        if ell_c_min[g] > 1e-12 else np.eye(dim)
        for g in range(len(goals))
    ]

    def try_connect_goals(new_idx: int) -> None:
        q_new = tree.coords[new_idx]
        pending = [g for g in range(len(goals))
                   if goal_valid[g] and goal_node[g] < 0]
        if not pending:
            return
        dists = np.linalg.norm(goal_arr[pending] - q_new, axis=1)
        close = [(g, d) for g, d in zip(pending, dists) if d <= cfg.step_size]
        if not close:
            return
        starts = np.tile(q_new, (len(close), 1))
        ends = np.stack([goal_arr[g] for g, _ in close])
        ok = _edges_feasible(model, scene, starts, ends, cfg.clearance)
        for (g, d), feasible in zip(close, ok):
            if feasible:
                goal_node[g] = tree.add(goal_arr[g], new_idx, float(d))

    # the start may already satisfy some goals (trivial problems)
    try_connect_goals(0)
    trace.expansions = 0

    for it in range(cfg.max_iters):
        trace.iterations = it + 1
        if it % _TIME_CHECK_EVERY == 0 and time.perf_counter() - start_t > cfg.time_budget:
            trace.best_costs = trace.best_costs[:it]
            break

        # -- sample
        unreached = [g for g in range(len(goals)) if goal_valid[g] and goal_node[g] < 0]
        reached = [g for g in range(len(goals)) if goal_node[g] >= 0]
        if unreached and rng.random() < cfg.goal_bias:
            q_rand = goal_arr[unreached[rr_goal_bias % len(unreached)]]
            rr_goal_bias += 1
        elif informed and reached:
            g = reached[rr_informed % len(reached)]
            rr_informed += 1
            c_best = float(tree.cost[goal_node[g]])
            if c_best <= ell_c_min[g] + 1e-12:
                q_rand = q_init + rng.random() * (goal_arr[g] - q_init)
            else:
                q_rand = _informed_draw(rng, ell_center[g], ell_rot[g],
                                        float(ell_c_min[g]), c_best, lo, hi)
        else:
            q_rand = rng.uniform(lo, hi)

        # -- steer
        d2 = np.einsum("nd,nd->n", tree.coords[:tree.n] - q_rand,
                       tree.coords[:tree.n] - q_rand)
        near = int(np.argmin(d2))
        delta = q_rand - tree.coords[near]
        dist = float(np.sqrt(d2[near]))
        if dist < 1e-9:
            trace.best_costs[it] = best
            continue
        q_new = tree.coords[near] + min(1.0, cfg.step_size / dist) * delta

        # -- neighbor set
        n = tree.n
        radius = min(4.0 * cfg.step_size,
                     cfg.rewire_gamma * (np.log(n + 1.0) / (n + 1.0)) ** (1.0 / dim))
        radius = max(radius, cfg.step_size)
        diff = tree.coords[:n] - q_new
        d_all = np.sqrt(np.einsum("nd,nd->n", diff, diff))
        nb = np.flatnonzero(d_all <= radius)
        if near not in nb:
            nb = np.append(nb, near)
        if nb.size > cfg.max_neighbors:
            nb = nb[np.argsort(d_all[nb], kind="stable")[:cfg.max_neighbors]]

        # node security defense rides on the edge check: every densified
        # edge includes its q_new endpoint, so an unsafe node rejects all
        ok = _edges_feasible(model, scene, tree.coords[nb],
                             np.tile(q_new, (nb.size, 1)), cfg.clearance)
        if not np.any(ok):
            trace.best_costs[it] = best
            continue

        # -- choose parent (min cost-to-come through a feasible neighbor)
        cand_cost = tree.cost[nb] + d_all[nb]
        cand_cost[~ok] = np.inf
        pick = int(np.argmin(cand_cost))
        new_idx = tree.add(q_new, int(nb[pick]), float(d_all[nb[pick]]))
        trace.expansions += 1

        # -- rewire neighbors through the new node (edge checks are symmetric)
        for j, nb_idx in enumerate(nb):
            if not ok[j] or nb_idx == tree.parent[new_idx]:
                continue
            new_cost = tree.cost[new_idx] + float(d_all[nb_idx])
            if new_cost < tree.cost[nb_idx] - 1e-12:
                tree.reparent(int(nb_idx), new_idx, new_cost)

        try_connect_goals(new_idx)

        connected = goal_node[goal_node >= 0]
        if connected.size:
            now_best = float(np.min(tree.cost[connected]))
            if now_best < best - 1e-12:
                # the idle counter only resets on non-cosmetic improvements,
                # otherwise perpetual micro-rewires defeat idle_stop
                if now_best < best - 1e-3:
                    last_improve = it
                best = now_best
                trace.solutions.append((it, time.perf_counter() - start_t, best))
        trace.best_costs[it] = best

        if (idle_stop is not None and not unreached
                and it - last_improve >= idle_stop):
            trace.best_costs = trace.best_costs[:it + 1]
            break

    trace.wall_time = time.perf_counter() - start_t
    reached_map = {g: int(goal_node[g]) for g in range(len(goals)) if goal_node[g] >= 0}
    return tree, reached_map, trace


def _extract(tree: _Tree, node: int, trace: PlanTrace) -> Path:
    waypoints = tree.path_to(node)
    return Path(waypoints=waypoints, cost=float(tree.cost[node]), trace=trace)


def plan_rrt_star(model: RobotModel, scene: Scene, q_init: np.ndarray,
                  goals: GoalSet, cfg: PlannerConfig) -> Path:
    """Asymptotically-optimal RRT* with uniform sampling; best goal wins."""
    tree, reached, trace = _grow_tree(model, scene, q_init, goals, cfg, informed=False)
    if not reached:
        raise PlanningError("no goal reached within the planning budget")
    node = min(reached.values(), key=lambda i: tree.cost[i])
    return _extract(tree, node, trace)


def plan_informed_rrt_star(model: RobotModel, scene: Scene, q_init: np.ndarray,
                           goals: GoalSet, cfg: PlannerConfig) -> Path:
    """RRT* that focuses samples on the incumbent-improving ellipsoid."""
    tree, reached, trace = _grow_tree(model, scene, q_init, goals, cfg, informed=True)
    if not reached:
        raise PlanningError("no goal reached within the planning budget")
    node = min(reached.values(), key=lambda i: tree.cost[i])
    return _extract(tree, node, trace)


def plan_shared_tree(model: RobotModel, scene: Scene, q_init: np.ndarray,
                     goals: GoalSet, cfg: PlannerConfig,
                     idle_stop: int | None = None) -> dict[int, Path]:
    """Grow one informed tree and return the best path per reached goal.

    The tree is grown exactly once regardless of goal count; informed
    sampling activates as soon as any goal connects.
    """
    tree, reached, trace = _grow_tree(model, scene, q_init, goals, cfg,
                                      informed=True, idle_stop=idle_stop)
    if not reached:
        raise PlanningError("no goal reached within the planning budget")
    return {g: _extract(tree, node, trace) for g, node in reached.items()}


def shortcut_path(model: RobotModel, scene: Scene, path: Path, cfg: PlannerConfig,
                  rng: np.random.Generator | None = None) -> Path:
    """Random shortcutting: try cfg.shortcut_passes direct reconnections."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed + 1)
    pts = [w.copy() for w in path.waypoints]
    for _ in range(cfg.shortcut_passes):
        if len(pts) < 3:
            break
        i = int(rng.integers(0, len(pts) - 2))
        j = int(rng.integers(i + 2, len(pts)))
        direct = float(np.linalg.norm(pts[j] - pts[i]))
        via = sum(float(np.linalg.norm(pts[k + 1] - pts[k])) for k in range(i, j))
        if direct >= via - 1e-9:
            continue
        ok = _edges_feasible(model, scene, pts[i][None, :], pts[j][None, :],
                             cfg.clearance)
        if ok[0]:
            del pts[i + 1:j]
    cost = sum(float(np.linalg.norm(b - a)) for a, b in zip(pts[:-1], pts[1:]))
    return Path(waypoints=pts, cost=cost, trace=path.trace)


def resample_path(path: Path, n: int) -> np.ndarray:
    """Resample a waypoint path to n frames uniform in config-space arc length.

    Endpoints are preserved exactly; a zero-cost path yields n copies of the
    start.
    """
    if n < 2:
        raise ValueError(f"need at least 2 frames, got {n}")
    pts = path.as_array()
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = float(seg.sum())
    if total <= 0.0:
        return np.tile(pts[0], (n, 1))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, total, n)
    out = np.empty((n, pts.shape[1]))
    out[0] = pts[0]
    out[-1] = pts[-1]
    idx = np.searchsorted(cum, targets[1:-1], side="right") - 1
    idx = np.clip(idx, 0, len(seg) - 1)
    frac = (targets[1:-1] - cum[idx]) / np.maximum(seg[idx], 1e-300)
    out[1:-1] = pts[idx] + frac[:, None] * (pts[idx + 1] - pts[idx])
    return out
