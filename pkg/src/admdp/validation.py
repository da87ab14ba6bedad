"""Input checks shared by the estimator and the pipeline."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .demogen.planner import Demonstration
from .simworld.sensors import Observation


class DimensionMismatchError(ValueError):
    pass


def check_demonstrations(demos: Sequence[Demonstration], agent_index: int, *, proprio_dim: int,
                         action_dim: int, n_points: int | None = None) -> None:
    if len(demos) == 0:
        raise ValueError("no demonstrations to fit on")
    first = demos[0]
    for k, d in enumerate(demos):
        if not d.success:
            raise ValueError(f"demonstration {k} is not a successful episode")
        if d.task != first.task or d.n_agents != first.n_agents:
            raise DimensionMismatchError(f"demonstration {k} mixes task/agent count "
                                         f"({d.task}, {d.n_agents}) with ({first.task}, {first.n_agents})")
        if not 0 <= agent_index < d.n_agents:
            raise DimensionMismatchError(f"agent index {agent_index} not present in a {d.n_agents}-agent dataset")
        if d.q.shape[-1] != proprio_dim:
            raise DimensionMismatchError(f"demonstration {k}: proprio dim {d.q.shape[-1]} != configured {proprio_dim}")
        if d.actions.shape[-1] != action_dim:
            raise DimensionMismatchError(f"demonstration {k}: action dim {d.actions.shape[-1]} != configured {action_dim}")
        if n_points is not None and d.clouds.shape[2] != n_points:
            raise DimensionMismatchError(f"demonstration {k}: {d.clouds.shape[2]} points != configured {n_points}")
        if d.images.shape[2:4] != first.images.shape[2:4] or d.clouds.shape[2] != first.clouds.shape[2]:
            raise DimensionMismatchError(f"demonstration {k}: observation shapes differ from demonstration 0")


def check_observation(obs: Observation) -> None:
    if obs.image.ndim != 3 or obs.image.shape[2] != 3:
        raise ValueError(f"image must be HxWx3, got {obs.image.shape}")
    if obs.image.min() < 0 or obs.image.max() > 1:
        raise ValueError("image values must lie in [0, 1]")
    if obs.cloud.ndim != 2 or obs.cloud.shape[1] != 6:
        raise ValueError(f"point cloud must be Nx6, got {obs.cloud.shape}")
    tac = np.asarray(obs.tactile)
    if tac.size != 32 or (tac < 0).any():
        raise ValueError("tactile frame must hold 32 non-negative readings")
    if not 0 <= obs.ego < len(obs.shared_tcps):
        raise ValueError("ego index outside the shared TCP list")


def check_history(history: Sequence[Observation], n_history: int) -> list[Observation]:
    """Validate and left-pad a frame history by repeating its oldest frame."""
    history = list(history)
    if not history:
        raise ValueError("history needs at least one observation")
    for obs in history:
        check_observation(obs)
    history = history[-n_history:]
    return [history[0]] * (n_history - len(history)) + history
