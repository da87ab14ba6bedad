"""Dataset generation with the 70/15/15 grasp-pattern split and the manifest file."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..numerics import seeded_rng
from ..simworld.tasks import TaskSpec
from .episode_io import VERSION, read_episode, write_episode
from .planner import PATTERNS, Demonstration, plan_episode

logger = logging.getLogger(__name__)

PATTERN_FRACTIONS = {"full_contact": 0.70, "release_regrasp": 0.15, "in_grasp_tighten": 0.15}


def pattern_counts(episodes: int, seed: int) -> dict[str, int]:
    """Largest-remainder apportionment; equal remainders are ordered by a seeded draw."""
    quotas = np.array([PATTERN_FRACTIONS[p] * episodes for p in PATTERNS])
    counts = np.floor(quotas + 1e-9).astype(int)
    rem = quotas - counts
    tiebreak = seeded_rng(seed, 0x71E).permutation(len(PATTERNS))
    order = sorted(range(len(PATTERNS)), key=lambda i: (-round(rem[i], 9), tiebreak[i]))
    for i in order[: episodes - counts.sum()]:
        counts[i] += 1
    return {p: int(c) for p, c in zip(PATTERNS, counts)}


def assign_patterns(episodes: int, seed: int) -> list[str]:
    counts = pattern_counts(episodes, seed)
    labels = [p for p in PATTERNS for _ in range(counts[p])]
    order = seeded_rng(seed, 0x5A0).permutation(episodes)
    return [labels[i] for i in order]


def episode_seed(dataset_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([dataset_seed, index, 0xE9]).generate_state(1, np.uint64)[0])


@dataclass
class DatasetManifest:
    task: str
    episodes: int
    seed: int
    n_agents: int
    pattern_counts: dict[str, int]
    patterns: list[str]
    action_min: np.ndarray
    action_max: np.ndarray
    format_version: int = VERSION
    demo_noise: float = 0.0

    def to_text(self) -> str:
        fmt = lambda a: " ".join(repr(float(np.float32(x))) for x in a)
        lines = ["# grasp-pattern dataset manifest",
                 f"format_version = {self.format_version}",
                 f"task = {self.task}",
                 f"seed = {self.seed}",
                 f"episodes = {self.episodes}",
                 f"n_agents = {self.n_agents}",
                 f"demo_noise = {self.demo_noise!r}"]
        lines += [f"pattern.{p} = {self.pattern_counts[p]}" for p in PATTERNS]
        lines += [f"action_min = {fmt(self.action_min)}", f"action_max = {fmt(self.action_max)}"]
        lines += [f"episode.{i:04d} = {p}" for i, p in enumerate(self.patterns)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        kv = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                k, _, v = line.partition("=")
                kv[k.strip()] = v.strip()
        n = int(kv["episodes"])
        counts = {p: int(kv[f"pattern.{p}"]) for p in PATTERNS}
        if sum(counts.values()) != n:
            raise ValueError(f"manifest pattern counts {counts} do not sum to {n} episodes")
        return cls(kv["task"], n, int(kv["seed"]), int(kv["n_agents"]), counts,
                   [kv[f"episode.{i:04d}"] for i in range(n)],
                   np.array(kv["action_min"].split(), dtype=np.float64),
                   np.array(kv["action_max"].split(), dtype=np.float64),
                   int(kv["format_version"]), float(kv.get("demo_noise", 0.0)))


def _make_episode(args):
    task, seed, pattern, n_points, noise = args
    return plan_episode(task, seed, pattern, n_points, noise=noise)


def generate_dataset(task: TaskSpec, episodes: int, seed: int, root, n_points: int = 256,
                     jobs: int = 1, noise: float = 0.0) -> DatasetManifest:
    """Plan, verify and write ``episodes`` demonstrations under ``root/<task>/``."""
    if episodes < 1:
        raise ValueError("need at least one episode")
    out = Path(root) / task.task
    out.mkdir(parents=True, exist_ok=True)
    patterns = assign_patterns(episodes, seed)
    work = [(task, episode_seed(seed, i), p, n_points, noise) for i, p in enumerate(patterns)]
    lo = np.full(4, np.inf)
    hi = np.full(4, -np.inf)

    def consume(i, demo: Demonstration):
        nonlocal lo, hi
        if not demo.success:
            raise RuntimeError(f"episode {i} did not succeed")
        acts = demo.actions.astype(np.float32).reshape(-1, demo.actions.shape[-1])
        lo, hi = np.minimum(lo, acts.min(axis=0)), np.maximum(hi, acts.max(axis=0))
        write_episode(demo, out / f"ep_{i:04d}.admd")
        logger.info("episode %d/%d %s (%d steps)", i + 1, episodes, demo.pattern, demo.n_steps)

    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            for i, demo in enumerate(pool.map(_make_episode, work)):
                consume(i, demo)
    else:
        for i, w in enumerate(work):
            consume(i, _make_episode(w))
    manifest = DatasetManifest(task.task, episodes, seed, task.n_agents, pattern_counts(episodes, seed),
                               patterns, lo, hi, demo_noise=float(noise))
    (out / "manifest.txt").write_text(manifest.to_text())
    return manifest


def dataset_dir(root, task: str) -> Path:
    return Path(root) / task


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.txt"
    if not path.exists():
        raise FileNotFoundError(f"no dataset manifest at {path}")
    return DatasetManifest.from_text(path.read_text())


def load_dataset(path) -> tuple[DatasetManifest, list[Demonstration]]:
    path = Path(path)
    manifest = load_manifest(path)
    demos = [read_episode(path / f"ep_{i:04d}.admd") for i in range(manifest.episodes)]
    return manifest, demos
