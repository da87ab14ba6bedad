"""Scripted demonstrations and the on-disk dataset format."""
from .dataset import (DatasetManifest, assign_patterns, generate_dataset, load_dataset, load_manifest,
                      pattern_counts)
from .episode_io import EpisodeFormatError, read_episode, write_episode
from .planner import PATTERNS, Demonstration, PlannerError, plan_episode

__all__ = [
    "DatasetManifest", "assign_patterns", "generate_dataset", "load_dataset", "load_manifest",
    "pattern_counts", "EpisodeFormatError", "read_episode", "write_episode", "PATTERNS",
    "Demonstration", "PlannerError", "plan_episode",
]
