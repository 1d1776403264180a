from .base import GoalSet, Path, PlannerConfig, PlanningError, PlanTrace
from .dataset import (
    DatasetError,
    DatasetRecord,
    SceneSpec,
    generate_dataset,
    generate_record,
    load_dataset,
    manifest_path,
)
from .ik import UnreachableTargetError, ik_solve
from .rrt import (
    plan_informed_rrt_star,
    plan_rrt_star,
    plan_shared_tree,
    resample_path,
    sample_informed,
    shortcut_path,
)

__all__ = [
    "GoalSet", "Path", "PlannerConfig", "PlanningError", "PlanTrace",
    "DatasetError", "DatasetRecord", "SceneSpec", "generate_dataset",
    "generate_record", "load_dataset", "manifest_path",
    "UnreachableTargetError", "ik_solve",
    "plan_informed_rrt_star", "plan_rrt_star", "plan_shared_tree",
    "resample_path", "sample_informed", "shortcut_path",
]
