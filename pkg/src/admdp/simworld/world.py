"""Kinematic multi-agent tabletop: TCP points with grippers, boxes with grasp sites.

Objects only move while carried; collisions are counted, never resolved.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from ..numerics import seeded_rng
from .tasks import WORKSPACE_HI, WORKSPACE_LO, TaskSpec

MAX_SPEED = 0.1          # m per step
MAX_OPENING = 0.08       # m between fingers at aperture 1
FINGER_LENGTH = 0.04     # m, fingertip to finger base
CAPTURE_RADIUS = 0.02    # m, horizontal grasp capture
TCP_RADIUS = 0.04        # m, collision sphere
STABLE_DEPTH = 0.5       # shallower grasps slip once the object leaves its support
SITE_BELOW_TOL = 0.015   # m the TCP may sit below a site and still grasp


@dataclass
class ObjectState:
    name: str
    kind: str
    pos: np.ndarray
    yaw: float
    half: np.ndarray
    color: np.ndarray
    sites: np.ndarray          # (k, 3) local offsets
    grip_width: float
    required: int
    holders_seen: list = field(default_factory=list)   # agent ids in order of first grasp

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def site_world(self, k: int) -> np.ndarray:
        return self.pos + self.rotation() @ self.sites[k]

    @property
    def grip_aperture(self) -> float:
        return self.grip_width / MAX_OPENING

    def to_local(self, p: np.ndarray) -> np.ndarray:
        return self.rotation().T @ (np.asarray(p) - self.pos)

    def footprint_contains(self, xy, margin: float = 0.0) -> bool:
        local = self.to_local(np.array([xy[0], xy[1], self.pos[2]]))
        return abs(local[0]) <= self.half[0] + margin and abs(local[1]) <= self.half[1] + margin


@dataclass
class AgentState:
    tcp: np.ndarray
    aperture: float = 1.0
    held: tuple[int, int] | None = None   # (object index, site index)


@dataclass(frozen=True)
class CollisionEvent:
    step: int
    first: tuple[str, int]
    second: tuple[str, int]
    depth: float


@dataclass
class WorldState:
    task: TaskSpec
    seed: int
    step: int
    agents: list[AgentState]
    objects: list[ObjectState]
    workspace: tuple[np.ndarray, np.ndarray] = (WORKSPACE_LO, WORKSPACE_HI)
    lift_streak: int = 0

    def copy(self) -> "WorldState":
        return copy.deepcopy(self)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def tcps(self) -> np.ndarray:
        return np.array([a.tcp for a in self.agents]).reshape(-1, 3)

    def holders(self, obj: int) -> list[int]:
        return [i for i, a in enumerate(self.agents) if a.held is not None and a.held[0] == obj]

    def grasp_depth(self, agent: int) -> float:
        """How far the held site sits between fingertip (0) and finger base (1)."""
        a = self.agents[agent]
        if a.held is None:
            return 0.0
        site = self.objects[a.held[0]].site_world(a.held[1])
        return depth_fraction(a.tcp, site)


def depth_fraction(tcp, site) -> float:
    return float(np.clip(1.0 - (tcp[2] - site[2]) / FINGER_LENGTH, 0.0, 1.0))


def _site_relation_ok(tcp, site) -> bool:
    dz = tcp[2] - site[2]
    return (np.hypot(tcp[0] - site[0], tcp[1] - site[1]) <= CAPTURE_RADIUS + 1e-12
            and -SITE_BELOW_TOL <= dz < FINGER_LENGTH)


def reset(task: TaskSpec, seed: int) -> WorldState:
    rng = seeded_rng(seed, 0x5E7)
    objects = []
    for spec in task.objects:
        x = rng.uniform(*spec.x_range)
        y = rng.uniform(*spec.y_range)
        yaw = rng.uniform(*spec.yaw_range) if spec.yaw_range[1] > spec.yaw_range[0] else spec.yaw_range[0]
        objects.append(ObjectState(spec.name, spec.kind, np.array([x, y, spec.half[2]]), float(yaw),
                                   np.array(spec.half, dtype=float), np.array(spec.color, dtype=float),
                                   np.array(spec.sites, dtype=float).reshape(-1, 3), spec.grip_width,
                                   spec.required))
    agents = [AgentState(np.array(h, dtype=float)) for h in task.homes]
    world = WorldState(task, int(seed), 0, agents, objects)
    for o in range(len(objects)):
        objects[o].pos[2] = support_height(world, o)
    return world


def support_height(world: WorldState, obj: int) -> float:
    """Resting centre height of ``obj`` at its current footprint position."""
    me = world.objects[obj]
    bottom = me.pos[2] - me.half[2]
    top = 0.0
    for j, other in enumerate(world.objects):
        other_top = other.pos[2] + other.half[2]
        if j != obj and other_top <= bottom + 1e-6 and other.footprint_contains(me.pos[:2]):
            top = max(top, other_top)
    return top + me.half[2]


def _clip_norm(v: np.ndarray, limit: float) -> np.ndarray:
    n = float(np.linalg.norm(v))
    return v if n <= limit else v * (limit / n)


def step(world: WorldState, actions) -> tuple[WorldState, list[CollisionEvent]]:
    """Advance one step. ``actions`` holds one ``(vx, vy, vz, aperture_rate)`` row per agent."""
    actions = np.asarray(actions, dtype=np.float64)
    if actions.ndim != 2 or actions.shape[0] != world.n_agents or actions.shape[1] != 4:
        raise ValueError(f"expected {world.n_agents} actions of length 4, got shape {actions.shape}")
    w = world.copy()
    w.step += 1
    lo, hi = w.workspace
    old_tcp = w.tcps()
    old_ap = np.array([a.aperture for a in w.agents])
    for a, act in zip(w.agents, actions):
        a.tcp = np.clip(a.tcp + _clip_norm(act[:3], MAX_SPEED), lo, hi)
        a.aperture = float(np.clip(a.aperture + act[3], 0.0, 1.0))

    # opening past the object's width releases it
    for a in w.agents:
        if a.held is not None and a.aperture > w.objects[a.held[0]].grip_aperture + 1e-12:
            a.held = None

    for o, obj in enumerate(w.objects):
        holders = w.holders(o)
        if not holders or not _carried(w, o):
            continue
        disp = np.mean([w.agents[i].tcp - old_tcp[i] for i in holders], axis=0)
        obj.pos = obj.pos + disp
        obj.pos[2] = max(obj.pos[2], support_height(w, o))

    _validate_holds(w)
    # shallow grasps slip once the object is off its support
    for o, obj in enumerate(w.objects):
        if obj.pos[2] > support_height(w, o) + 1e-9:
            for i in w.holders(o):
                if w.grasp_depth(i) < STABLE_DEPTH:
                    w.agents[i].held = None
    _settle(w)
    _validate_holds(w)

    # closing through the grip width engages a grasp at a free site
    for i, a in enumerate(w.agents):
        if a.held is not None:
            continue
        for o, obj in enumerate(w.objects):
            thr = obj.grip_aperture
            if not (old_ap[i] > thr + 1e-12 and a.aperture <= thr + 1e-12):
                continue
            taken = {w.agents[j].held[1] for j in w.holders(o)}
            for k in range(len(obj.sites)):
                if k not in taken and _site_relation_ok(a.tcp, obj.site_world(k)):
                    a.held = (o, k)
                    if i not in obj.holders_seen:
                        obj.holders_seen.append(i)
                    break
            if a.held is not None:
                break

    _update_streak(w)
    return w, collisions(w)


def _carried(w: WorldState, o: int) -> bool:
    sites = {w.agents[i].held[1] for i in w.holders(o)}
    return len(sites) >= w.objects[o].required


def _validate_holds(w: WorldState) -> None:
    for a in w.agents:
        if a.held is None:
            continue
        site = w.objects[a.held[0]].site_world(a.held[1])
        if not _site_relation_ok(a.tcp, site):
            a.held = None


def _settle(w: WorldState) -> None:
    # lowest first so stacked objects land on settled supports
    order = sorted(range(len(w.objects)), key=lambda o: w.objects[o].pos[2])
    for o in order:
        if not _carried(w, o) or not w.holders(o):
            w.objects[o].pos[2] = support_height(w, o)


def _update_streak(w: WorldState) -> None:
    if w.task.task != "lift_bar":
        return
    bar = w.objects[0]
    rest = bar.half[2]
    both = len({w.agents[i].held[1] for i in w.holders(0)}) == len(bar.sites)
    if both and bar.pos[2] >= rest + w.task.target_height - 1e-9:
        w.lift_streak += 1
    else:
        w.lift_streak = 0


def _sphere_box_depth(center: np.ndarray, obj: ObjectState, radius: float) -> float:
    local = obj.to_local(center)
    outside = np.maximum(np.abs(local) - obj.half, 0.0)
    dist = float(np.linalg.norm(outside))
    if dist > 0:
        return radius - dist
    return radius + float(np.min(obj.half - np.abs(local)))


def collisions(w: WorldState) -> list[CollisionEvent]:
    events = []
    tcps = w.tcps()
    for i in range(w.n_agents):
        for j in range(i + 1, w.n_agents):
            depth = 2 * TCP_RADIUS - float(np.linalg.norm(tcps[i] - tcps[j]))
            if depth > 1e-12:
                events.append(CollisionEvent(w.step, ("agent", i), ("agent", j), depth))
    for i, a in enumerate(w.agents):
        for o, obj in enumerate(w.objects):
            if a.held is not None and a.held[0] == o:
                continue
            # approaching a grasp site is intended contact
            if any(np.hypot(*(a.tcp[:2] - obj.site_world(k)[:2])) <= CAPTURE_RADIUS
                   for k in range(len(obj.sites))):
                continue
            depth = _sphere_box_depth(a.tcp, obj, TCP_RADIUS)
            if depth > 1e-12:
                events.append(CollisionEvent(w.step, ("agent", i), ("object", o), depth))
    return events


def task_success(w: WorldState, task: TaskSpec | None = None) -> bool:
    task = task or w.task
    if task.task == "lift_bar":
        return w.lift_streak >= task.hold_steps
    if task.task == "pass_block":
        obj = w.objects[0]
        if w.holders(0) or obj.holders_seen[:2] != [0, 1]:
            return False
        resting = abs(obj.pos[2] - support_height(w, 0)) < 1e-9
        return resting and np.hypot(*(obj.pos[:2] - np.asarray(task.goal))) <= task.place_tolerance
    if task.task == "stack_blocks":
        below = w.objects[0]
        for obj in w.objects[1:]:
            if w.holders(w.objects.index(obj)):
                return False
            if np.hypot(*(obj.pos[:2] - below.pos[:2])) > task.place_tolerance:
                return False
            if abs(obj.pos[2] - (below.pos[2] + below.half[2] + obj.half[2])) > 1e-6:
                return False
            below = obj
        return True
    raise ValueError(f"unknown task {task.task!r}")
