"""Deterministic toy tabletop simulator with synthetic tactile sensing."""
from .sensors import (Observation, assemble_observation, read_tactile, render_rgb,
                      sample_pointcloud, tactile_pattern)
from .tasks import TASK_IDS, ObjectSpec, TaskSpec, default_task
from .world import CollisionEvent, WorldState, collisions, reset, step, task_success

__all__ = [
    "Observation", "assemble_observation", "read_tactile", "render_rgb", "sample_pointcloud",
    "tactile_pattern", "TASK_IDS", "ObjectSpec", "TaskSpec", "default_task", "CollisionEvent",
    "WorldState", "collisions", "reset", "step", "task_success",
]
