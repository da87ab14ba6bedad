"""Task definitions for the toy tabletop: object layouts, roles and success parameters."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

TASK_IDS = ("lift_bar", "pass_block", "stack_blocks")

WORKSPACE_LO = np.array([-0.35, -0.35, 0.0])
WORKSPACE_HI = np.array([0.35, 0.35, 0.4])


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    kind: str                    # bar | block | shoe
    half: tuple[float, float, float]
    color: tuple[float, float, float]
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    yaw_range: tuple[float, float] = (0.0, 0.0)
    sites: tuple[tuple[float, float, float], ...] = ()
    grip_width: float = 0.04
    # number of distinct grasp sites that must be held before the object moves
    required: int = 1


@dataclass(frozen=True)
class TaskSpec:
    task: str
    n_agents: int
    instructions: tuple[str, ...]
    objects: tuple[ObjectSpec, ...]
    homes: tuple[tuple[float, float, float], ...]
    target_height: float = 0.06
    hold_steps: int = 5
    place_tolerance: float = 0.03
    goal: tuple[float, float] = (0.17, 0.0)
    handover: tuple[float, float, float] = (0.0, 0.0, 0.1)

    def __post_init__(self):
        if self.task not in TASK_IDS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASK_IDS}")
        if len(self.instructions) != self.n_agents:
            raise ValueError(f"{self.task}: {len(self.instructions)} instructions for {self.n_agents} agents")
        if len(self.homes) != self.n_agents:
            raise ValueError(f"{self.task}: {len(self.homes)} home poses for {self.n_agents} agents")

    @property
    def vocabulary(self) -> tuple[str, ...]:
        return self.instructions


AGENT_COLORS = ((0.9, 0.2, 0.2), (0.2, 0.4, 0.95), (0.2, 0.85, 0.3))


def lift_bar() -> TaskSpec:
    bar = ObjectSpec("bar", "bar", (0.15, 0.02, 0.02), (0.95, 0.85, 0.1),
                     (-0.01, 0.01), (-0.01, 0.01), (-0.03, 0.03),
                     sites=((-0.12, 0.0, 0.0), (0.12, 0.0, 0.0)), grip_width=0.04, required=2)
    return TaskSpec("lift_bar", 2,
                    ("grasp the left end of the bar and lift it together",
                     "grasp the right end of the bar and lift it together"),
                    (bar,), ((-0.22, 0.0, 0.14), (0.22, 0.0, 0.14)))


def pass_block() -> TaskSpec:
    peg = ObjectSpec("peg", "block", (0.08, 0.015, 0.015), (0.6, 0.2, 0.8),
                     (-0.2, -0.14), (-0.04, 0.04), (0.0, 0.0),
                     sites=((-0.05, 0.0, 0.0), (0.05, 0.0, 0.0)), grip_width=0.03, required=1)
    return TaskSpec("pass_block", 2,
                    ("pick up the peg and hand it over in the middle",
                     "take the peg from your partner and place it on the goal"),
                    (peg,), ((-0.2, -0.15, 0.14), (0.2, 0.15, 0.14)))


def stack_blocks(n_agents: int = 2) -> TaskSpec:
    if n_agents not in (2, 3):
        raise ValueError("stack_blocks supports 2 or 3 agents")
    base = ObjectSpec("base", "block", (0.025, 0.025, 0.025), (0.5, 0.5, 0.5),
                      (-0.03, 0.03), (-0.03, 0.03))
    starts = (((-0.18, -0.12), (0.08, 0.14)), ((0.12, 0.18), (0.08, 0.14)), ((-0.03, 0.03), (-0.18, -0.12)))
    blocks = tuple(ObjectSpec(f"block{i}", "block", (0.02, 0.02, 0.02), AGENT_COLORS[i],
                              starts[i][0], starts[i][1], sites=((0.0, 0.0, 0.0),), grip_width=0.04)
                   for i in range(n_agents))
    homes = ((-0.22, 0.2, 0.14), (0.22, 0.2, 0.14), (0.0, -0.25, 0.14))[:n_agents]
    words = ("first", "second", "third")
    return TaskSpec("stack_blocks", n_agents,
                    tuple(f"stack your cube {words[i]} on the tower" for i in range(n_agents)),
                    (base,) + blocks, homes, place_tolerance=0.015)


def default_task(task: str, n_agents: int | None = None) -> TaskSpec:
    if task == "lift_bar":
        spec = lift_bar()
    elif task == "pass_block":
        spec = pass_block()
    elif task == "stack_blocks":
        return stack_blocks(n_agents or 2)
    else:
        raise ValueError(f"unknown task {task!r}; expected one of {TASK_IDS}")
    if n_agents is not None and n_agents != spec.n_agents:
        raise ValueError(f"{task} is a {spec.n_agents}-agent task")
    return spec


def with_ranges(spec: TaskSpec, obj: str, **ranges) -> TaskSpec:
    objs = tuple(replace(o, **ranges) if o.name == obj else o for o in spec.objects)
    return replace(spec, objects=objs)
