"""Sphere-obstacle scenes: sampled point-cloud observations, analytic signed
distance, and the hinge-style safety penalty used for collision costs.

The distance field is computed from the sphere parameters, not from the
sampled cloud; the cloud is only the observation handed to learners.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_SAFE_DISTANCE = 0.05  # meters


@dataclass(frozen=True)
class SphereObstacle:
    center: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        if not np.all(np.isfinite(self.center)):
            raise ValueError("sphere center must be finite")
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"sphere radius must be > 0, got {self.radius}")


@dataclass(frozen=True)
class Scene:
    """Workspace box plus sphere obstacles (centers inside the box)."""

    spheres: tuple[SphereObstacle, ...]
    bounds_min: np.ndarray = field(default_factory=lambda: np.array([-1.0, -1.0, 0.0]))
    bounds_max: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0, 1.3]))

    def __post_init__(self) -> None:
        object.__setattr__(self, "spheres", tuple(self.spheres))
        object.__setattr__(self, "bounds_min", np.asarray(self.bounds_min, dtype=float).reshape(3))
        object.__setattr__(self, "bounds_max", np.asarray(self.bounds_max, dtype=float).reshape(3))
        if not np.all(self.bounds_min < self.bounds_max):
            raise ValueError("scene bounds must satisfy min < max per axis")
        for s in self.spheres:
            if np.any(s.center < self.bounds_min) or np.any(s.center > self.bounds_max):
                raise ValueError(f"sphere center {s.center} outside scene bounds")

    @property
    def centers(self) -> np.ndarray:
        """(M, 3) sphere centers; (0, 3) for an empty scene."""
        if not self.spheres:
            return np.zeros((0, 3))
        return np.stack([s.center for s in self.spheres])

    @property
    def radii(self) -> np.ndarray:
        return np.array([s.radius for s in self.spheres])

    def to_dict(self) -> dict:
        return {
            "bounds": {"min": self.bounds_min.tolist(), "max": self.bounds_max.tolist()},
            "spheres": [{"center": s.center.tolist(), "radius": s.radius} for s in self.spheres],
        }

    @staticmethod
    def from_dict(raw: dict) -> "Scene":
        spheres = tuple(SphereObstacle(np.asarray(s["center"], dtype=float), float(s["radius"]))
                        for s in raw.get("spheres", []))
        bounds = raw.get("bounds", {})
        kwargs = {}
        if "min" in bounds:
            kwargs["bounds_min"] = np.asarray(bounds["min"], dtype=float)
        if "max" in bounds:
            kwargs["bounds_max"] = np.asarray(bounds["max"], dtype=float)
        return Scene(spheres=spheres, **kwargs)


def load_scene(path: str | Path) -> Scene:
    return Scene.from_dict(json.loads(Path(path).read_text()))


def save_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=1))


@dataclass(frozen=True)
class ObstaclePointCloud:
    """K surface points sampled from a scene, with the seed that produced them."""

    points: np.ndarray
    seed: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float).reshape(-1, 3))

    @property
    def k(self) -> int:
        return self.points.shape[0]

    def flat(self) -> np.ndarray:
        return self.points.reshape(-1)


def _allocate_proportional(weights: np.ndarray, k: int) -> np.ndarray:
    """Deterministic largest-remainder split of k samples by weight."""
    share = weights / weights.sum() * k
    counts = np.floor(share).astype(int)
    remainder = k - counts.sum()
    if remainder > 0:
        order = np.argsort(-(share - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


def sample_point_cloud(scene: Scene, k: int, seed: int) -> ObstaclePointCloud:
    """Sample k points uniformly over the total obstacle surface area.

    Allocation across spheres is deterministic-proportional to surface area;
    draws are reproducible for a fixed (scene, k, seed).
    """
    if not scene.spheres:
        raise ValueError("cannot sample a point cloud from an empty scene; "
                         "use the null condition for obstacle-free tasks")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    areas = 4.0 * np.pi * scene.radii ** 2
    counts = _allocate_proportional(areas, k)
    rng = np.random.default_rng(seed)
    chunks = []
    for sphere, n in zip(scene.spheres, counts):
        if n == 0:
            continue
        vec = rng.standard_normal((n, 3))
        norm = np.linalg.norm(vec, axis=1, keepdims=True)
        # Degenerate draws (norm ~ 0) have measure zero; fall back to +z.
        vec = np.where(norm > 1e-12, vec / np.maximum(norm, 1e-300), [0.0, 0.0, 1.0])
        chunks.append(sphere.center[None, :] + sphere.radius * vec)
    return ObstaclePointCloud(points=np.concatenate(chunks, axis=0), seed=seed)


def signed_distance(p: np.ndarray, scene: Scene) -> float | np.ndarray:
    """Min over spheres of (|p - center| - radius); +inf for an empty scene.

    Accepts a single point (3,) or a batch (K, 3).
    """
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    pts = np.atleast_2d(p)
    if not scene.spheres:
        out = np.full(pts.shape[0], np.inf)
        return float(out[0]) if single else out
    diff = pts[:, None, :] - scene.centers[None, :, :]
    d = np.linalg.norm(diff, axis=2) - scene.radii[None, :]
    out = d.min(axis=1)
    return float(out[0]) if single else out


def hinge_penalty(p: np.ndarray, scene: Scene, s: float = DEFAULT_SAFE_DISTANCE) -> float:
    """Safety hinge: S - D(p) when D(p) <= S, else 0."""
    if s < 0:
        raise ValueError(f"safe distance must be >= 0, got {s}")
    d = signed_distance(p, scene)
    return float(s - d) if d <= s else 0.0


def min_clearance(points: np.ndarray, scene: Scene) -> float:
    """Minimum signed distance over a point set; +inf for an empty scene."""
    if not scene.spheres:
        return float("inf")
    return float(np.min(signed_distance(points, scene)))


def collision_loss(points: np.ndarray, scene: Scene,
                   s: float = DEFAULT_SAFE_DISTANCE) -> tuple[float, np.ndarray]:
    """Mean hinge penalty over a point set and its gradient w.r.t. the points.

    For an active point the gradient is the inward -(p - c)/|p - c| direction
    of its nearest sphere (lowest index on ties), scaled by the 1/K of the
    mean; inactive points get zero.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    k = points.shape[0]
    if not scene.spheres or k == 0:
        return 0.0, np.zeros_like(points)
    diff = points[:, None, :] - scene.centers[None, :, :]
    dist_c = np.linalg.norm(diff, axis=2)
    d = dist_c - scene.radii[None, :]
    nearest = np.argmin(d, axis=1)
    d_min = d[np.arange(k), nearest]
    active = d_min <= s
    loss = float(np.sum(np.where(active, s - d_min, 0.0)) / k)
    grad = np.zeros_like(points)
    if np.any(active):
        vec = diff[np.arange(k), nearest]
        norm = dist_c[np.arange(k), nearest]
        safe = norm > 1e-12
        unit = np.where(safe[:, None], vec / np.maximum(norm, 1e-300)[:, None], 0.0)
        grad[active] = -unit[active] / k
    return loss, grad
