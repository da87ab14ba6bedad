"""Lockstep multi-agent rollouts with receding-horizon replanning, and evaluation reports."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import torch

from ..fusion import MODALITIES
from ..numerics import seeded_rng
from ..simworld import sensors
from ..simworld.tasks import TaskSpec
from ..simworld.world import CollisionEvent, WorldState, reset, step, task_success

STEP_CAP = 200
CONTACT_FORCE = 0.05    # N, resultant that marks the start of the in-contact phase
_DDIM = 0xDD1


class AgentCountError(ValueError):
    pass


class Controller(Protocol):
    agent_index_: int
    n_execute: int

    def predict_chunk(self, history, generator=None) -> tuple[np.ndarray, np.ndarray | None]: ...


class ExpertReplay:
    """Replays a scripted expert's actions through the rollout harness; no network involved."""

    def __init__(self, task: TaskSpec, seed: int, agent: int, pattern: str = "full_contact",
                 n_execute: int = 6):
        from ..demogen.planner import plan_episode
        self.agent_index_ = agent
        self.n_execute = n_execute
        self._actions = plan_episode(task, seed, pattern, record=False).actions[:, agent]
        self._cursor = 0

    def predict_chunk(self, history, generator=None):
        out = self._actions[self._cursor:self._cursor + self.n_execute]
        self._cursor += len(out)
        if len(out) < self.n_execute:
            out = np.concatenate([out, np.zeros((self.n_execute - len(out), 4))])
        return out, None


@dataclass
class AlphaRecord:
    step: int
    agent: int
    alpha: np.ndarray
    resultant: float


@dataclass
class EpisodeResult:
    seed: int
    success: bool
    steps: int
    collisions: list[CollisionEvent]
    alpha: list[AlphaRecord]
    contact_step: list[int]          # first step with resultant above CONTACT_FORCE, -1 if never
    replans: int = 0

    @property
    def n_collisions(self) -> int:
        return len(self.collisions)


def _resultant(world: WorldState, agent: int) -> float:
    return float(sensors.read_tactile(world, agent).sum())


def rollout(policies: Sequence[Controller], task: TaskSpec, seed: int, *, step_cap: int = STEP_CAP,
            n_points: int = 256, image_size: int = sensors.IMAGE_SIZE) -> EpisodeResult:
    """Run one episode: every agent replans on the same step, then all execute in lockstep."""
    if len(policies) != task.n_agents:
        raise AgentCountError(f"{task.task} needs {task.n_agents} policies, got {len(policies)}")
    for i, p in enumerate(policies):
        if p.agent_index_ != i:
            raise AgentCountError(f"policy in slot {i} was trained for agent {p.agent_index_}")
    n_hist = max(getattr(p, "n_history", 1) for p in policies)
    gens = [torch.Generator().manual_seed(int(seeded_rng(seed, _DDIM, i).integers(2**62)))
            for i in range(task.n_agents)]
    world = reset(task, seed)
    recent = [world]
    queues = [np.zeros((0, 4)) for _ in policies]
    events: list[CollisionEvent] = []
    alpha: list[AlphaRecord] = []
    contact = [-1] * task.n_agents
    replans, success = 0, False
    while world.step < step_cap:
        for i in range(task.n_agents):
            if contact[i] < 0 and _resultant(world, i) > CONTACT_FORCE:
                contact[i] = world.step
        if any(len(q) == 0 for q in queues):
            replans += 1
            for i, p in enumerate(policies):
                hist = [sensors.assemble_observation(w, i, task, n_points, image_size) for w in recent]
                acts, a = p.predict_chunk(hist, gens[i])
                queues[i] = np.asarray(acts)[: p.n_execute]
                if a is not None:
                    alpha.append(AlphaRecord(world.step, i, np.asarray(a, dtype=np.float64),
                                             float(hist[-1].tactile.sum())))
        act = np.stack([q[0] for q in queues])
        queues = [q[1:] for q in queues]
        world, ev = step(world, act)
        events += ev
        recent = (recent + [world])[-n_hist:]
        if task_success(world):
            success = True
            break
    return EpisodeResult(seed, success, world.step, events, alpha, contact, replans)


def phase_of(rec: AlphaRecord, contact_step: int) -> str:
    return "contact" if 0 <= contact_step <= rec.step else "pre"


@dataclass
class EvalReport:
    task: str
    episodes: int
    base_seed: int
    label: str
    results: list[EpisodeResult] = field(repr=False, default_factory=list)

    @property
    def success_rate(self) -> float:
        return sum(r.success for r in self.results) / max(len(self.results), 1)

    @property
    def collisions(self) -> list[int]:
        return [r.n_collisions for r in self.results]

    @property
    def mean_collisions(self) -> float:
        return float(np.mean(self.collisions)) if self.results else 0.0

    @property
    def mean_steps_to_success(self) -> float:
        steps = [r.steps for r in self.results if r.success]
        return float(np.mean(steps)) if steps else math.nan

    def phase_alpha(self) -> dict[str, tuple[np.ndarray, int]]:
        """Mean modality weights per phase, with the number of records averaged."""
        groups = {"pre": [], "contact": []}
        for r in self.results:
            for rec in r.alpha:
                groups[phase_of(rec, r.contact_step[rec.agent])].append(rec.alpha)
        return {k: (np.mean(v, axis=0) if v else np.full(3, np.nan), len(v)) for k, v in groups.items()}

    def to_kv(self) -> str:
        ph = self.phase_alpha()
        lines = [f"task = {self.task}", f"label = {self.label}", f"episodes = {self.episodes}",
                 f"base_seed = {self.base_seed}", f"success_rate = {self.success_rate!r}",
                 f"mean_collisions = {self.mean_collisions!r}",
                 f"mean_steps_to_success = {self.mean_steps_to_success!r}",
                 "collisions = " + " ".join(map(str, self.collisions)),
                 "successes = " + " ".join(str(int(r.success)) for r in self.results)]
        for phase, (mean, n) in ph.items():
            lines.append(f"alpha.{phase}.count = {n}")
            lines += [f"alpha.{phase}.{m} = {float(v)!r}" for m, v in zip(MODALITIES, mean)]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        ph = self.phase_alpha()
        msts = self.mean_steps_to_success
        out = [f"{self.task} [{self.label}]: {self.episodes} episodes from seed {self.base_seed}",
               f"  success rate        {self.success_rate:.3f}",
               f"  collisions/episode  {self.mean_collisions:.2f}",
               f"  steps to success    {'n/a' if math.isnan(msts) else f'{msts:.1f}'}",
               "  modality weights    vision   tactile  graph    (records)"]
        for phase, (mean, n) in ph.items():
            vals = "  ".join("   n/a " if math.isnan(v) else f"{v:.4f}" for v in mean)
            out.append(f"    {phase:<10}        {vals}  ({n})")
        return "\n".join(out) + "\n"

    def trace_text(self) -> str:
        lines = ["# episode seed step agent phase resultant alpha_vision alpha_tactile alpha_graph"]
        for e, r in enumerate(self.results):
            for rec in r.alpha:
                lines.append(f"{e} {r.seed} {rec.step} {rec.agent} {phase_of(rec, r.contact_step[rec.agent])} "
                             f"{rec.resultant:.6f} " + " ".join(f"{v:.8f}" for v in rec.alpha))
        return "\n".join(lines) + "\n"

    def write(self, out_dir, stem: str = "report") -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = [(f"{stem}.txt", self.to_text()), (f"{stem}.kv", self.to_kv()),
                 (f"{stem}_alpha.trace", self.trace_text())]
        for name, text in files:
            (out / name).write_text(text)
        return [out / n for n, _ in files]


def _episode(args):
    policies, task, seed, kw = args
    torch.set_num_threads(1)
    return rollout(policies, task, seed, **kw)


def evaluate(policies: Sequence[Controller], task: TaskSpec, episodes: int, base_seed: int = 0, *,
             label: str = "full", step_cap: int = STEP_CAP, n_points: int = 256, jobs: int = 1) -> EvalReport:
    """Roll out seeds ``base_seed .. base_seed + episodes - 1`` and aggregate."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if len(policies) != task.n_agents:
        raise AgentCountError(f"{task.task} needs {task.n_agents} policies, got {len(policies)}")
    kw = dict(step_cap=step_cap, n_points=n_points)
    work = [(policies, task, base_seed + e, kw) for e in range(episodes)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_episode, work))
    else:
        results = [rollout(policies, task, s, **kw) for _, _, s, _ in work]
    return EvalReport(task.task, episodes, base_seed, label, results)
