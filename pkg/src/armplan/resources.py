"""Locations of packaged robot descriptions, scenes, and default config."""

from __future__ import annotations

from pathlib import Path

DATA_DIR = Path(__file__).parent / "data"

ROBOTS = {"panda7": "panda7.json", "planar2": "planar2.json"}
SCENES = {"two_spheres": "two_spheres.json"}


def robot_path(name: str) -> Path:
    try:
        return DATA_DIR / ROBOTS[name]
    except KeyError:
        raise KeyError(f"unknown robot '{name}'; available: {sorted(ROBOTS)}") from None


def scene_path(name: str) -> Path:
    try:
        return DATA_DIR / SCENES[name]
    except KeyError:
        raise KeyError(f"unknown scene '{name}'; available: {sorted(SCENES)}") from None


def defaults_path() -> Path:
    return DATA_DIR / "defaults.json"
