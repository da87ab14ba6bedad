"""Scripted waypoint experts with shallow-to-deep grasp refinement variants.

Each agent runs a generator that yields one action per step and reads the
shared world through ``_Ctx``; coordination waits on world predicates that
every agent evaluates against the same pre-step state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from ..numerics import seeded_rng
from ..simworld import sensors
from ..simworld.tasks import TaskSpec
from ..simworld.world import FINGER_LENGTH, WorldState, reset, step, task_success

PATTERNS = ("full_contact", "release_regrasp", "in_grasp_tighten")
SPEED = 0.02
LIFT_SPEED = 0.015
APERTURE_RATE = 0.25
SHALLOW_RANGE = (0.2, 0.4)
PLANNER_CAP = 300


class PlannerError(RuntimeError):
    pass


@dataclass
class Demonstration:
    task: str
    seed: int
    pattern: str
    instruction_ids: np.ndarray   # (n,)
    images: np.ndarray            # (S, n, H, W, 3)
    clouds: np.ndarray            # (S, n, N, 6)
    tactile: np.ndarray           # (S, n, 2, 4, 4)
    q: np.ndarray                 # (S, n, d_q)
    tcps: np.ndarray              # (S, n, 3), shared by every agent
    actions: np.ndarray           # (S, n, 4)
    success: bool

    @property
    def n_steps(self) -> int:
        return len(self.actions)

    @property
    def n_agents(self) -> int:
        return self.actions.shape[1]

    def resultant(self, agent: int) -> np.ndarray:
        return self.tactile[:, agent].reshape(self.n_steps, -1).sum(axis=1)


class _Ctx:
    def __init__(self, world: WorldState):
        self.world = world

    def agent(self, i):
        return self.world.agents[i]


def _act(vel=(0.0, 0.0, 0.0), rate=0.0) -> np.ndarray:
    return np.array([*vel, rate], dtype=np.float64)


def _clip_norm(v, limit):
    n = float(np.linalg.norm(v))
    return v if n <= limit else v * (limit / n)


def move_to(ctx: _Ctx, i: int, target, speed: float = SPEED) -> Iterator[np.ndarray]:
    target = np.asarray(target, dtype=np.float64)
    while True:
        d = target - ctx.agent(i).tcp
        if np.linalg.norm(d) < 1e-9:
            return
        yield _act(_clip_norm(d, speed))


def set_aperture(ctx: _Ctx, i: int, target: float, rate: float = APERTURE_RATE) -> Iterator[np.ndarray]:
    while abs(target - ctx.agent(i).aperture) > 1e-12:
        yield _act(rate=float(np.clip(target - ctx.agent(i).aperture, -rate, rate)))


def idle(n: int) -> Iterator[np.ndarray]:
    for _ in range(n):
        yield _act()


def wait_until(ctx: _Ctx, cond: Callable[[WorldState], bool]) -> Iterator[np.ndarray]:
    while not cond(ctx.world):
        yield _act()


def firmly_held(w: WorldState, i: int, obj: int | None = None) -> bool:
    a = w.agents[i]
    return (a.held is not None and (obj is None or a.held[0] == obj)
            and w.grasp_depth(i) >= 1.0 - 1e-9 and a.aperture <= 1e-12)


def grasp(ctx: _Ctx, i: int, site: np.ndarray, grip_aperture: float, pattern: str,
          rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Descend on ``site`` and close, following one of the three grasp patterns."""
    above = site + np.array([0.0, 0.0, 0.07])
    yield from move_to(ctx, i, above)
    full = site.copy()
    if pattern == "full_contact":
        yield from move_to(ctx, i, full)
        yield from set_aperture(ctx, i, 0.0)
        return
    d = rng.uniform(*SHALLOW_RANGE)
    shallow = site + np.array([0.0, 0.0, (1.0 - d) * FINGER_LENGTH])
    yield from move_to(ctx, i, shallow)
    if pattern == "release_regrasp":
        yield from set_aperture(ctx, i, 0.0)
        yield from idle(2)
        yield from set_aperture(ctx, i, 1.0)
        yield from move_to(ctx, i, full)
        yield from set_aperture(ctx, i, 0.0)
    elif pattern == "in_grasp_tighten":
        partial = grip_aperture - 0.1
        yield from set_aperture(ctx, i, partial)
        yield from idle(1)
        n = max(3, math.ceil((shallow[2] - full[2]) / 0.008))
        dz, da = (full[2] - shallow[2]) / n, -partial / n
        for _ in range(n):
            yield _act((0.0, 0.0, dz), da)
        # absorb rounding so the grasp ends exactly at full depth and closure
        yield from move_to(ctx, i, full)
        yield from set_aperture(ctx, i, 0.0)
    else:
        raise ValueError(f"unknown grasp pattern {pattern!r}")


def _forever(gen: Iterator[np.ndarray]) -> Iterator[np.ndarray]:
    yield from gen
    while True:
        yield _act()


# --- task scripts ----------------------------------------------------------

def _lift_bar(ctx: _Ctx, i: int, pattern: str, rng, task: TaskSpec):
    bar = ctx.world.objects[0]
    yield from grasp(ctx, i, bar.site_world(i), bar.grip_aperture, pattern, rng)
    yield from wait_until(ctx, lambda w: all(firmly_held(w, j, 0) for j in range(w.n_agents)))
    yield from move_to(ctx, i, ctx.agent(i).tcp + [0.0, 0.0, task.target_height + 0.01], LIFT_SPEED)


def _pass_block(ctx: _Ctx, i: int, pattern: str, rng, task: TaskSpec):
    handover = np.asarray(task.handover, dtype=np.float64)
    peg = lambda: ctx.world.objects[0]
    if i == 0:
        yield from grasp(ctx, i, peg().site_world(0), peg().grip_aperture, pattern, rng)
        yield from move_to(ctx, i, ctx.agent(i).tcp + [0.0, 0.0, handover[2] - peg().pos[2]], LIFT_SPEED)
        yield from move_to(ctx, i, handover + (peg().site_world(0) - peg().pos))
        yield from wait_until(ctx, lambda w: firmly_held(w, 1, 0))
        yield from set_aperture(ctx, i, 1.0)
        yield from move_to(ctx, i, ctx.agent(i).tcp + [0.0, 0.0, 0.06])
        yield from move_to(ctx, i, task.homes[0])
    else:
        def at_handover(w):
            return firmly_held(w, 0, 0) and np.linalg.norm(w.objects[0].pos - handover) < 1e-9
        yield from wait_until(ctx, at_handover)
        # the in-air grasp is always a full-contact one
        yield from grasp(ctx, i, peg().site_world(1), peg().grip_aperture, "full_contact", rng)
        yield from wait_until(ctx, lambda w: w.agents[0].held is None
                              and w.agents[0].tcp[2] >= handover[2] + 0.03)
        offset = peg().site_world(1) - peg().pos
        goal = np.array([task.goal[0], task.goal[1], handover[2]])
        yield from move_to(ctx, i, goal + offset)
        yield from move_to(ctx, i, np.array([*(goal + offset)[:2], peg().half[2] + offset[2]]), LIFT_SPEED)
        yield from set_aperture(ctx, i, 1.0)


def _stack_blocks(ctx: _Ctx, i: int, pattern: str, rng, task: TaskSpec):
    mine, below = i + 1, i

    def previous_done(w):
        if i == 0:
            return True
        prev, placed, under = w.agents[i - 1], w.objects[below], w.objects[below - 1]
        stacked = abs(placed.pos[2] - (under.pos[2] + under.half[2] + placed.half[2])) < 1e-9
        return stacked and not w.holders(below) and prev.tcp[2] >= 0.12
    yield from wait_until(ctx, previous_done)
    obj = lambda: ctx.world.objects[mine]
    yield from grasp(ctx, i, obj().site_world(0), obj().grip_aperture, pattern, rng)
    base = ctx.world.objects[below]
    top = base.pos[2] + base.half[2]
    carry_z = top + obj().half[2] + 0.06
    yield from move_to(ctx, i, [*ctx.agent(i).tcp[:2], carry_z], LIFT_SPEED)
    yield from move_to(ctx, i, [base.pos[0], base.pos[1], carry_z])
    yield from move_to(ctx, i, [base.pos[0], base.pos[1], top + obj().half[2]], LIFT_SPEED)
    yield from set_aperture(ctx, i, 1.0)
    yield from move_to(ctx, i, ctx.agent(i).tcp + [0.0, 0.0, 0.08])


_SCRIPTS = {"lift_bar": _lift_bar, "pass_block": _pass_block, "stack_blocks": _stack_blocks}


def pattern_agents(task: TaskSpec) -> tuple[int, ...]:
    """Agents whose first grasp follows the episode pattern."""
    return (0,) if task.task == "pass_block" else tuple(range(task.n_agents))


def expert_actions(task: TaskSpec, world: WorldState, pattern: str, seed: int):
    """Per-agent action generators bound to a live world context."""
    ctx = _Ctx(world)
    gens = []
    for i in range(task.n_agents):
        p = pattern if i in pattern_agents(task) else "full_contact"
        rng = seeded_rng(seed, 0x9A7, i)
        gens.append(_forever(_SCRIPTS[task.task](ctx, i, p, rng, task)))
    return ctx, gens


def _cruising(world: WorldState, i: int, a: np.ndarray) -> bool:
    """Free-space, full-speed, mostly horizontal move with an open, empty gripper."""
    ag = world.agents[i]
    xy, z = float(np.linalg.norm(a[:2])), abs(float(a[2]))
    return (ag.held is None and ag.aperture >= 1.0 - 1e-12 and a[3] == 0.0
            and xy >= z and float(np.linalg.norm(a[:3])) >= SPEED - 1e-12)


def perturb(world: WorldState, actions: np.ndarray, rng: np.random.Generator, noise: float) -> np.ndarray:
    """Executed actions: ``actions`` plus xy noise on cruising agents only."""
    out = actions.copy()
    draws = rng.normal(0.0, 1.0, (len(actions), 2))
    for i, a in enumerate(actions):
        if noise > 0 and _cruising(world, i, a):
            out[i, :2] += noise * draws[i]
    return out


def plan_episode(task: TaskSpec, seed: int, pattern: str, n_points: int = 256,
                 image_size: int = sensors.IMAGE_SIZE, record: bool = True,
                 noise: float = 0.0) -> Demonstration:
    """Run the scripted experts; ``actions`` holds the expert's clean commands.

    ``noise`` (m) perturbs executed free-space cruise steps in xy, so recorded
    labels depend on where the target is rather than on the previous velocity.
    """
    if pattern not in PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}; expected one of {PATTERNS}")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    world = reset(task, seed)
    ctx, gens = expert_actions(task, world, pattern, seed)
    noise_rng = seeded_rng(seed, 0xDA7)
    obs, acts = [], []
    trace = []
    for _ in range(PLANNER_CAP):
        a = np.stack([next(g) for g in gens])
        if record:
            obs.append([sensors.assemble_observation(ctx.world, i, task, n_points, image_size)
                        for i in range(task.n_agents)])
        acts.append(a)
        ctx.world, _ = step(ctx.world, perturb(ctx.world, a, noise_rng, noise))
        trace.append((ctx.world.step, [ag.held for ag in ctx.world.agents],
                      [o.pos.round(4).tolist() for o in ctx.world.objects]))
        if task_success(ctx.world):
            break
    else:
        tail = "\n".join(map(str, trace[-5:]))
        raise PlannerError(f"{task.task} seed={seed} pattern={pattern}: no success after "
                           f"{PLANNER_CAP} steps; last states:\n{tail}")
    n = task.n_agents
    if not record:
        empty = np.zeros((len(acts), n, 0))
        return Demonstration(task.task, seed, pattern, np.arange(n), empty, empty, empty, empty,
                             empty, np.array(acts), True)
    stack = lambda f: np.array([[f(o) for o in row] for row in obs])
    return Demonstration(task.task, seed, pattern, np.array([o.instruction_id for o in obs[0]]),
                         stack(lambda o: o.image), stack(lambda o: o.cloud), stack(lambda o: o.tactile),
                         stack(lambda o: o.q), np.array([row[0].shared_tcps for row in obs]),
                         np.array(acts), True)
