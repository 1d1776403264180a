"""Shared planner data types."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class PlanningError(RuntimeError):
    """Raised when a planning problem is infeasible or the budget runs out."""


@dataclass
class PlannerConfig:
    """Knobs for the sampling-based planners.

    ``clearance`` is the node security margin: configurations (and densified
    edge points) closer than this to any obstacle are rejected outright.
    """

    step_size: float = 0.15
    goal_bias: float = 0.1
    max_iters: int = 30000
    rewire_gamma: float = 1.25
    clearance: float = 0.05
    time_budget: float = float("inf")
    seed: int = 0
    shortcut_passes: int = 40
    max_neighbors: int = 24

    def __post_init__(self) -> None:
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError(f"goal_bias must be in [0, 1], got {self.goal_bias}")
        if self.step_size <= 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.clearance < 0:
            raise ValueError(f"clearance must be >= 0, got {self.clearance}")


@dataclass(frozen=True)
class GoalSet:
    """Joint configurations that all realize the task goal."""

    configs: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if len(self.configs) == 0:
            raise ValueError("goal set must be non-empty")
        object.__setattr__(
            self, "configs",
            tuple(np.asarray(c, dtype=float).reshape(-1) for c in self.configs))

    def __len__(self) -> int:
        return len(self.configs)


@dataclass
class PlanTrace:
    """Per-run planner statistics for benchmark curves and property checks.

    ``best_costs[i]`` is the incumbent best goal cost after iteration i
    (inf before the first connection); ``solutions`` records (iteration,
    elapsed seconds, cost) whenever the incumbent improves.
    """

    best_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    solutions: list[tuple[int, float, float]] = field(default_factory=list)
    expansions: int = 0
    iterations: int = 0
    wall_time: float = 0.0

    @property
    def first_solution_time(self) -> float | None:
        return self.solutions[0][1] if self.solutions else None


@dataclass
class Path:
    """Waypoint path in configuration space with its arc-length cost."""

    waypoints: list[np.ndarray]
    cost: float
    trace: PlanTrace | None = None

    def __post_init__(self) -> None:
        if len(self.waypoints) < 2:
            raise ValueError("a path needs at least 2 waypoints")
        self.waypoints = [np.asarray(w, dtype=float).reshape(-1) for w in self.waypoints]

    def as_array(self) -> np.ndarray:
        return np.stack(self.waypoints)
