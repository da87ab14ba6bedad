"""Synthetic sensing: FSR tactile grid, top-down raster, surface point cloud."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..numerics import seeded_rng
from ..perception import preprocess_pointcloud
from .tasks import AGENT_COLORS, TaskSpec
from .world import WorldState

TAXEL_FORCE = 1.0        # N per active taxel at full squeeze
TACTILE_NOISE = 0.02     # N
IMAGE_SIZE = 64
TABLE_COLOR = np.array([0.55, 0.45, 0.35])
PROPRIO_DIM = 5

_TACTILE, _CLOUD = 0x7AC, 0xC10


@dataclass
class Observation:
    image: np.ndarray        # (H, W, 3) in [0, 1]
    cloud: np.ndarray        # (N, 6)
    tactile: np.ndarray      # (2, 4, 4) newtons
    q: np.ndarray            # (5,) tcp, aperture, held flag
    instruction_id: int
    shared_tcps: np.ndarray  # (n, 3)
    ego: int


def active_rows(depth: float) -> int:
    return int(math.ceil(4 * depth - 1e-9)) if depth > 0 else 0


def tactile_pattern(depth: float, squeeze: float) -> np.ndarray:
    """Noise-free frame: ``ceil(4 d)`` rows from the fingertip active on both fingers."""
    frame = np.zeros((2, 4, 4))
    rows = active_rows(depth)
    frame[:, :rows, :] = TAXEL_FORCE * squeeze
    return frame


def read_tactile(world: WorldState, agent: int, noise: bool = True) -> np.ndarray:
    a = world.agents[agent]
    if a.held is None:
        return np.zeros((2, 4, 4))
    frame = tactile_pattern(world.grasp_depth(agent), 1.0 - a.aperture)
    if noise:
        rng = seeded_rng(world.seed, _TACTILE, world.step, agent)
        frame = np.maximum(frame + rng.normal(0.0, TACTILE_NOISE, frame.shape), 0.0)
    return frame


def _pixel_centres(world: WorldState, size: int):
    lo, hi = world.workspace
    xs = lo[0] + (np.arange(size) + 0.5) * (hi[0] - lo[0]) / size
    ys = lo[1] + (np.arange(size) + 0.5) * (hi[1] - lo[1]) / size
    return np.meshgrid(xs, ys, indexing="xy")   # rows follow y, columns follow x


def render_rgb(world: WorldState, agent: int, size: int = IMAGE_SIZE) -> np.ndarray:
    """Orthographic top-down raster: table, objects by height, TCP discs (ego drawn last)."""
    img = np.broadcast_to(TABLE_COLOR, (size, size, 3)).copy()
    px, py = _pixel_centres(world, size)
    for o in sorted(range(len(world.objects)), key=lambda o: world.objects[o].pos[2]):
        obj = world.objects[o]
        c, s = math.cos(obj.yaw), math.sin(obj.yaw)
        dx, dy = px - obj.pos[0], py - obj.pos[1]
        lx, ly = c * dx + s * dy, -s * dx + c * dy
        img[(np.abs(lx) <= obj.half[0]) & (np.abs(ly) <= obj.half[1])] = obj.color
    order = [i for i in range(world.n_agents) if i != agent] + [agent]
    for i in order:
        a = world.agents[i]
        # disc radius grows with height, brightness with gripper opening
        radius = 0.012 + 0.08 * a.tcp[2]
        shade = 0.55 + 0.45 * a.aperture
        color = np.array(AGENT_COLORS[i % len(AGENT_COLORS)]) * shade
        if i == agent:
            color = np.minimum(color + 0.25, 1.0)
        img[(px - a.tcp[0]) ** 2 + (py - a.tcp[1]) ** 2 <= radius ** 2] = color
    return img


def _box_surface_points(obj, n: int, rng: np.random.Generator) -> np.ndarray:
    hx, hy, hz = obj.half
    # five faces (no bottom) weighted by area
    faces = [("z", +1, 4 * hx * hy), ("x", +1, 4 * hy * hz), ("x", -1, 4 * hy * hz),
             ("y", +1, 4 * hx * hz), ("y", -1, 4 * hx * hz)]
    areas = np.array([f[2] for f in faces])
    choice = rng.choice(len(faces), size=n, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, size=(n, 3)) * obj.half
    for idx, (axis, sign, _) in enumerate(faces):
        m = choice == idx
        u[m, "xyz".index(axis)] = sign * obj.half["xyz".index(axis)]
    world_pts = u @ obj.rotation().T + obj.pos
    return np.hstack([world_pts, np.broadcast_to(obj.color, (n, 3))])


def sample_pointcloud(world: WorldState, agent: int, n_points: int = 256,
                      rng: np.random.Generator | None = None, object_fraction: float = 0.5) -> np.ndarray:
    if n_points < 1:
        raise ValueError("need at least one point")
    if rng is None:
        rng = seeded_rng(world.seed, _CLOUD, world.step, agent)
    lo, hi = world.workspace
    raw_total = 2 * n_points
    n_obj = int(round(object_fraction * raw_total)) if world.objects else 0
    areas = np.array([4 * o.half[0] * o.half[1] + 4 * o.half[2] * (o.half[0] + o.half[1])
                      for o in world.objects])
    parts = []
    if n_obj:
        counts = rng.multinomial(n_obj, areas / areas.sum())
        parts += [_box_surface_points(o, c, rng) for o, c in zip(world.objects, counts) if c]
    n_table = raw_total - n_obj
    table = np.column_stack([rng.uniform(lo[0], hi[0], n_table), rng.uniform(lo[1], hi[1], n_table),
                             np.zeros(n_table), np.broadcast_to(TABLE_COLOR, (n_table, 3))])
    parts.append(table)
    return preprocess_pointcloud(np.vstack(parts), (lo, hi), n_points, rng)


def proprio(world: WorldState, agent: int) -> np.ndarray:
    a = world.agents[agent]
    return np.array([*a.tcp, a.aperture, 1.0 if a.held is not None else 0.0])


def assemble_observation(world: WorldState, agent: int, task: TaskSpec | None = None,
                         n_points: int = 256, image_size: int = IMAGE_SIZE) -> Observation:
    return Observation(render_rgb(world, agent, image_size),
                       sample_pointcloud(world, agent, n_points),
                       read_tactile(world, agent),
                       proprio(world, agent),
                       agent,
                       world.tcps().copy(),
                       agent)
