"""Decoupled per-agent training and the ablation suite."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from ..config import RunConfig
from ..demogen.dataset import DatasetManifest, load_dataset
from ..demogen.planner import Demonstration
from ..estimator import AdmDpPolicy
from ..policy import AblationFlags
from ..validation import DimensionMismatchError
from .checkpoint import (Checkpoint, CheckpointError, checkpoint_from_policy, load_checkpoint,
                         policy_from_checkpoint, save_checkpoint)
from .rollout import EvalReport, evaluate

logger = logging.getLogger(__name__)

VARIANTS = ("full", "no_pc", "no_tact", "no_graph", "no_amam")


def check_dataset(manifest: DatasetManifest, demos: Sequence[Demonstration], config: RunConfig,
                  agent_index: int) -> None:
    task = config.task()
    if manifest.task != task.task or manifest.n_agents != task.n_agents:
        raise DimensionMismatchError(f"dataset holds {manifest.task} with {manifest.n_agents} agents; "
                                     f"config wants {task.task} with {task.n_agents}")
    if not 0 <= agent_index < task.n_agents:
        raise DimensionMismatchError(f"agent index {agent_index} outside 0..{task.n_agents - 1}")
    if demos and demos[0].clouds.shape[2] != config.n_points:
        raise DimensionMismatchError(f"dataset clouds have {demos[0].clouds.shape[2]} points; "
                                     f"config n_points = {config.n_points}")


def _as_dataset(dataset):
    if isinstance(dataset, (str, Path)):
        return load_dataset(dataset)
    return dataset


def train_agent(dataset, agent_index: int, config: RunConfig,
                flags: AblationFlags | None = None) -> Checkpoint:
    """Fit one agent's policy. ``dataset`` is a directory or a ``(manifest, demos)`` pair."""
    if flags is not None:
        config = config.with_flags(flags)
    manifest, demos = _as_dataset(dataset)
    check_dataset(manifest, demos, config, agent_index)
    policy = AdmDpPolicy(**config.estimator_params())
    policy.fit(demos, agent_index, config.task().vocabulary)
    return checkpoint_from_policy(policy, config)


def untrained_checkpoint(dataset, agent_index: int, config: RunConfig) -> Checkpoint:
    """Random parameters with the trained policy's action normalization: the learning baseline."""
    return train_agent(dataset, agent_index, replace(config, n_steps=0))


def train_or_load(dataset, config: RunConfig, cache_dir=None) -> list[Checkpoint]:
    """Checkpoints for every agent, reusing files in ``cache_dir`` whose config hash matches."""
    ckpts = []
    for i in range(config.task().n_agents):
        path = Path(cache_dir) / f"{config.hash[:16]}_agent{i}.admc" if cache_dir else None
        if path is not None and path.is_file():
            try:
                ckpts.append(load_checkpoint(path, config.hash))
                logger.info("reusing %s", path)
                continue
            except CheckpointError as exc:
                logger.warning("ignoring cached checkpoint %s: %s", path, exc)
        ck = train_agent(dataset, i, config)
        if path is not None:
            save_checkpoint(ck, path)
        ckpts.append(ck)
    return ckpts


def evaluate_checkpoints(ckpts: Sequence[Checkpoint], config: RunConfig, episodes: int | None = None,
                         base_seed: int | None = None, label: str | None = None, jobs: int | None = None) -> EvalReport:
    policies = [policy_from_checkpoint(c) for c in ckpts]
    return evaluate(policies, config.task(), episodes or config.eval_episodes,
                    config.seed if base_seed is None else base_seed,
                    label=label or config.flags.label, step_cap=config.step_cap, n_points=config.n_points,
                    jobs=jobs or config.jobs)


@dataclass
class AblationReport:
    task: str
    rows: dict[str, EvalReport] = field(default_factory=dict)

    def to_text(self) -> str:
        head = f"{'variant':<10} {'success':>8} {'coll/ep':>8} {'steps':>7}  {'alpha pre (v/t/g)':<22} alpha contact (v/t/g)"
        lines = [f"ablations on {self.task}", head]
        for name, rep in self.rows.items():
            ph = rep.phase_alpha()
            fmt = lambda a: "/".join("nan" if math.isnan(x) else f"{x:.2f}" for x in a)
            msts = rep.mean_steps_to_success
            lines.append(f"{name:<10} {rep.success_rate:>8.3f} {rep.mean_collisions:>8.2f} "
                         f"{'n/a' if math.isnan(msts) else f'{msts:.1f}':>7}  {fmt(ph['pre'][0]):<22} "
                         f"{fmt(ph['contact'][0])}")
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        out = [f"task = {self.task}", "variants = " + " ".join(self.rows)]
        for name, rep in self.rows.items():
            out += [f"{name}.{line}" for line in rep.to_kv().splitlines()]
        return "\n".join(out) + "\n"


def ablation_suite(dataset, config: RunConfig, variants: Sequence[str] = VARIANTS,
                   cache_dir=None, episodes: int | None = None) -> AblationReport:
    """Train and evaluate each variant under identical data, seeds and evaluation episodes."""
    ds = _as_dataset(dataset)
    report = AblationReport(config.task().task)
    for name in variants:
        cfg = config.with_flags(AblationFlags.from_names([name]))
        ckpts = train_or_load(ds, cfg, cache_dir)
        report.rows[name] = evaluate_checkpoints(ckpts, cfg, episodes, label=name)
        logger.info("%s: success %.3f, collisions/ep %.2f", name, report.rows[name].success_rate,
                    report.rows[name].mean_collisions)
    return report
