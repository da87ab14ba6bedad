"""Per-agent diffusion policy with a scikit-learn style interface.

``AdmDpPolicy.fit`` trains one agent's network on demonstrations;
``predict`` turns a short observation history into the next executed actions.
"""
from __future__ import annotations

import logging
import time
from typing import Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import diffusion as dif
from .demogen.planner import Demonstration
from .fusion import InstructionTable
from .numerics import AdamOptimizer, seeded_rng
from .policy import PRESETS, AblationFlags, AdmDpNet, NetDims
from .simworld.sensors import Observation
from .validation import check_demonstrations, check_history

logger = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}
ENTROPY_SIGNS = {"as_written": 1.0, "flipped": -1.0}

_INIT, _BATCH, _NOISE = 0x1A1, 0xBA7, 0x401


def _round32(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float32).astype(np.float64)


class TrainingWindows:
    """Frames of one agent flattened across episodes, with history and chunk indices."""

    def __init__(self, demos: Sequence[Demonstration], agent: int, n_history: int, horizon: int):
        cat = lambda f: np.concatenate([f(d) for d in demos]).astype(np.float32)
        self.image = cat(lambda d: d.images[:, agent])
        self.cloud = cat(lambda d: d.clouds[:, agent])
        self.tactile = cat(lambda d: d.tactile[:, agent])
        self.q = cat(lambda d: d.q[:, agent])
        self.tcps = cat(lambda d: d.tcps)
        self.instruction = np.concatenate([np.full(d.n_steps, d.instruction_ids[agent]) for d in demos])
        actions = [d.actions[:, agent].astype(np.float64) for d in demos]
        hist, chunks, start = [], [], 0
        for a in actions:
            s = len(a)
            t = np.arange(s)
            # histories clamp at the first frame of their own episode
            offs = np.arange(-(n_history - 1), 1)
            hist.append(start + np.clip(t[:, None] + offs[None, :], 0, None))
            padded = np.concatenate([a, np.zeros((horizon, a.shape[1]))])
            chunks.append(np.stack([padded[i:i + horizon] for i in range(s)]))
            start += s
        self.history = np.concatenate(hist)
        self.chunks = np.concatenate(chunks)
        self.ego = agent

    def __len__(self) -> int:
        return len(self.history)

    def batch(self, idx: np.ndarray, dtype: torch.dtype) -> dict[str, torch.Tensor]:
        h = self.history[idx]
        t = lambda x: torch.as_tensor(x[h], dtype=dtype)
        return {"image": t(self.image), "cloud": t(self.cloud), "tactile": t(self.tactile),
                "q": t(self.q), "tcps": t(self.tcps),
                "instruction": torch.as_tensor(self.instruction[h], dtype=torch.long),
                "ego": torch.full(h.shape, self.ego, dtype=torch.long)}


def history_tensors(history: Sequence[Observation], dtype: torch.dtype) -> dict[str, torch.Tensor]:
    """A single history as a batch of one: tensors shaped (1, F, ...)."""
    st = lambda f: torch.as_tensor(np.stack([f(o) for o in history])[None], dtype=dtype)
    return {"image": st(lambda o: o.image), "cloud": st(lambda o: o.cloud),
            "tactile": st(lambda o: o.tactile), "q": st(lambda o: o.q), "tcps": st(lambda o: o.shared_tcps),
            "instruction": torch.tensor([[o.instruction_id for o in history]], dtype=torch.long),
            "ego": torch.tensor([[o.ego for o in history]], dtype=torch.long)}


class AdmDpPolicy(BaseEstimator):
    """Diffusion action-chunk policy for a single agent.

    Parameters mirror the run configuration; ``fit`` never mutates them.
    """

    def __init__(self, preset="toy", tau=1.0, lam=0.01, entropy_sign="as_written", lr=1e-3,
                 ema_decay=0.995, batch_size=32, n_steps=2000, schedule_T=100, schedule_kind="cosine", ddim_steps=20,
                 n_execute=6, no_pc=False, no_tact=False, no_graph=False, no_amam=False,
                 dtype="float32", random_state=0, log_every=100):
        self.preset = preset
        self.tau = tau
        self.lam = lam
        self.entropy_sign = entropy_sign
        self.lr = lr
        self.ema_decay = ema_decay
        self.batch_size = batch_size
        self.n_steps = n_steps
        self.schedule_T = schedule_T
        self.schedule_kind = schedule_kind
        self.ddim_steps = ddim_steps
        self.n_execute = n_execute
        self.no_pc = no_pc
        self.no_tact = no_tact
        self.no_graph = no_graph
        self.no_amam = no_amam
        self.dtype = dtype
        self.random_state = random_state
        self.log_every = log_every

    # -- configuration helpers ----------------------------------------------
    @property
    def flags(self) -> AblationFlags:
        return AblationFlags(bool(self.no_pc), bool(self.no_tact), bool(self.no_graph), bool(self.no_amam))

    @property
    def n_history(self) -> int:
        return self._dims().n_history

    def _dims(self) -> NetDims:
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        return PRESETS[self.preset]

    def _validate_params(self) -> None:
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}")
        if self.entropy_sign not in ENTROPY_SIGNS:
            raise ValueError(f"entropy_sign must be one of {sorted(ENTROPY_SIGNS)}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")
        if self.batch_size < 1 or self.n_steps < 0:
            raise ValueError("batch_size must be >= 1 and n_steps >= 0")
        if not 1 <= self.n_execute <= self._dims().horizon:
            raise ValueError(f"n_execute must lie in [1, {self._dims().horizon}]")
        if not 1 <= self.ddim_steps <= self.schedule_T:
            raise ValueError("ddim_steps must lie in [1, schedule_T]")

    def build(self, vocabulary: Sequence[str], agent_index: int, n_agents: int,
              instruction_table: np.ndarray | None = None) -> "AdmDpPolicy":
        """Create an untrained network (random parameters) ready for ``predict``."""
        self._validate_params()
        dims = self._dims()
        table = (InstructionTable(vocabulary, dims.lang_dim, self.random_state).table
                 if instruction_table is None else np.asarray(instruction_table, dtype=np.float64))
        # checkpoints store float32; keep the in-memory policy identical to a reloaded one
        table = _round32(table)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(int(seeded_rng(self.random_state, _INIT, agent_index).integers(2**62)))
            self.net_ = AdmDpNet(dims, table, self.tau, self.flags, DTYPES[self.dtype])
        self.schedule_ = dif.make_schedule(self.schedule_T, self.schedule_kind)
        self.vocabulary_ = list(vocabulary)
        self.agent_index_ = int(agent_index)
        self.n_agents_ = int(n_agents)
        self.action_min_ = -np.ones(dims.action_dim)
        self.action_max_ = np.ones(dims.action_dim)
        self.loss_curve_ = []
        self.steps_done_ = 0
        return self

    # -- action normalization -------------------------------------------------
    def _span(self) -> np.ndarray:
        return np.maximum(self.action_max_ - self.action_min_, 1e-6)

    def normalize_actions(self, a: np.ndarray) -> np.ndarray:
        return 2.0 * (a - self.action_min_) / self._span() - 1.0

    def denormalize_actions(self, a: np.ndarray) -> np.ndarray:
        return (a + 1.0) / 2.0 * self._span() + self.action_min_

    # -- training -------------------------------------------------------------
    def fit(self, demos: Sequence[Demonstration], agent_index: int = 0, vocabulary: Sequence[str] | None = None):
        """Train on ``demos`` for agent ``agent_index``.

        ``vocabulary`` defaults to one placeholder entry per agent.
        """
        self._validate_params()
        dims = self._dims()
        check_demonstrations(demos, agent_index, proprio_dim=dims.proprio_dim, action_dim=dims.action_dim)
        n_agents = demos[0].n_agents
        if vocabulary is None:
            vocabulary = [f"instruction {i}" for i in range(n_agents)]
        self.build(vocabulary, agent_index, n_agents)
        data = TrainingWindows(demos, agent_index, dims.n_history, dims.horizon)
        acts = np.concatenate([d.actions[:, agent_index] for d in demos]).astype(np.float64)
        self.action_min_, self.action_max_ = _round32(acts.min(axis=0)), _round32(acts.max(axis=0))
        chunks = self.normalize_actions(data.chunks)
        self.train_steps(data, chunks, self.n_steps)
        return self

    def train_steps(self, data: TrainingWindows, chunks: np.ndarray, n_steps: int) -> None:
        dtype = DTYPES[self.dtype]
        rng = seeded_rng(self.random_state, _BATCH, self.agent_index_)
        gen = torch.Generator().manual_seed(int(seeded_rng(self.random_state, _NOISE,
                                                           self.agent_index_).integers(2**62)))
        opt = AdamOptimizer(self.net_.parameters(), self.lr)
        params = list(self.net_.parameters())
        ema = [p.detach().clone() for p in params] if self.ema_decay > 0 else None
        sign = ENTROPY_SIGNS[self.entropy_sign]
        self.net_.train()
        t0 = time.perf_counter()
        for s in range(n_steps):
            idx = rng.integers(0, len(data), size=self.batch_size)
            hist = data.batch(idx, dtype)
            a0 = torch.as_tensor(chunks[idx], dtype=dtype)
            opt.zero_grad()
            total, l_diff, l_reg, _ = self.net_.loss(hist, a0, self.schedule_, self.lam, gen, sign)
            total.backward()
            opt.step()
            if ema is not None:
                # short warm-up so early random weights do not dominate the average
                d = min(self.ema_decay, (1.0 + s) / (10.0 + s))
                with torch.no_grad():
                    for e, p in zip(ema, params):
                        e.mul_(d).add_(p.detach(), alpha=1.0 - d)
            self.loss_curve_.append((total.item(), l_diff.item(), l_reg.item()))
            self.steps_done_ += 1
            if self.log_every and (s + 1) % self.log_every == 0:
                recent = np.mean([c[1] for c in self.loss_curve_[-self.log_every:]])
                logger.info("agent %d step %d/%d  L_diff %.4f  (%.1fs)", self.agent_index_, s + 1,
                            n_steps, recent, time.perf_counter() - t0)
        if ema is not None and n_steps > 0:
            with torch.no_grad():
                for e, p in zip(ema, params):
                    p.copy_(e)
        self.net_.eval()

    # -- inference ------------------------------------------------------------
    def predict_chunk(self, history: Sequence[Observation], generator: torch.Generator | None = None):
        """Full denoised chunk in environment units plus the newest frame's modality weights."""
        check_is_fitted(self, "net_")
        dims = self.net_.dims
        history = check_history(history, dims.n_history)
        for obs in history:
            if obs.ego != self.agent_index_:
                raise ValueError(f"observation for agent {obs.ego} given to agent {self.agent_index_}'s policy")
        hist = history_tensors(history, self.net_.dtype)
        chunk, alpha = self.net_.sample(hist, self.schedule_, self.ddim_steps, generator)
        actions = self.denormalize_actions(chunk[0].double().numpy())
        return actions, alpha[0, -1].double().numpy()

    def predict(self, history: Sequence[Observation], generator: torch.Generator | None = None) -> np.ndarray:
        """The next ``n_execute`` actions for this agent."""
        return self.predict_chunk(history, generator)[0][: self.n_execute]
