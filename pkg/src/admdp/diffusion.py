"""Noise schedules, forward corruption, the temporal U-Net and DDPM/DDIM samplers."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64


@dataclass(frozen=True)
class DiffusionSchedule:
    """``beta[k-1]`` is beta_k for k = 1..T; ``alpha_bar(0)`` is 1 by convention."""

    beta: np.ndarray
    kind: str = "linear"

    @property
    def T(self) -> int:
        return len(self.beta)

    @property
    def alpha(self) -> np.ndarray:
        return 1.0 - self.beta

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alpha)

    def alpha_bar(self, k) -> np.ndarray | float:
        table = np.concatenate([[1.0], self.alpha_bars])
        return table[np.asarray(k)]

    def beta_at(self, k):
        return self.beta[np.asarray(k) - 1]


def make_schedule(T: int, kind: str = "linear", beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> DiffusionSchedule:
    if T < 1:
        raise ValueError("schedule needs at least one step (T >= 1)")
    if kind == "linear":
        beta = np.linspace(beta_start, beta_end, T)
    elif kind == "cosine":
        s = 0.008
        t = np.arange(T + 1) / T
        f = np.cos((t + s) / (1 + s) * math.pi / 2) ** 2
        abar = f / f[0]
        beta = np.clip(1.0 - abar[1:] / abar[:-1], 1e-8, 0.999)
    else:
        raise ValueError(f"unknown schedule kind {kind!r} (expected 'linear' or 'cosine')")
    return DiffusionSchedule(np.asarray(beta, dtype=np.float64), kind)


def _bcast(values, like: torch.Tensor) -> torch.Tensor:
    v = torch.as_tensor(values, dtype=like.dtype)
    return v.reshape(v.shape + (1,) * (like.dim() - v.dim()))


def q_sample(a0: torch.Tensor, k, schedule: DiffusionSchedule,
             generator: torch.Generator | None = None, eps: torch.Tensor | None = None):
    """Corrupt ``a0`` to step ``k`` (scalar or per-row); returns ``(a_k, eps)``."""
    if eps is None:
        eps = torch.randn(a0.shape, generator=generator, dtype=a0.dtype)
    abar = _bcast(schedule.alpha_bar(k), a0)
    return abar.sqrt() * a0 + (1.0 - abar).sqrt() * eps, eps


def timestep_embedding(k: torch.Tensor, dim: int, dtype=DTYPE) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=dtype) / max(half - 1, 1))
    args = k.to(dtype).unsqueeze(-1) * freqs
    return torch.cat([args.sin(), args.cos()], dim=-1)


class CondResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, cond_dim: int, kernel: int = 3, groups: int = 8):
        super().__init__()
        pad = kernel // 2
        self.block1 = nn.Sequential(nn.Conv1d(c_in, c_out, kernel, padding=pad),
                                    nn.GroupNorm(groups, c_out), nn.Mish())
        self.block2 = nn.Sequential(nn.Conv1d(c_out, c_out, kernel, padding=pad),
                                    nn.GroupNorm(groups, c_out), nn.Mish())
        self.film = nn.Sequential(nn.Mish(), nn.Linear(cond_dim, 2 * c_out))
        self.skip = nn.Conv1d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = self.block1(x)
        scale, bias = self.film(cond).unsqueeze(-1).chunk(2, dim=1)
        h = self.block2(scale * h + bias)
        return h + self.skip(x)


class NoisePredictor(nn.Module):
    """1D U-Net over the horizon axis, FiLM-conditioned on ``f_cond`` and the timestep."""

    def __init__(self, action_dim: int, cond_dim: int, base: int = 32, levels: int = 2,
                 kernel: int = 3, time_dim: int = 32):
        super().__init__()
        self.time_dim = time_dim
        self.time_mlp = nn.Sequential(nn.Linear(time_dim, 2 * time_dim), nn.Mish(),
                                      nn.Linear(2 * time_dim, time_dim))
        cdim = cond_dim + time_dim
        widths = [base * 2 ** i for i in range(levels)]
        self.down = nn.ModuleList()
        self.downsample = nn.ModuleList()
        c = action_dim
        for w in widths:
            self.down.append(CondResBlock(c, w, cdim, kernel))
            self.downsample.append(nn.Conv1d(w, w, 3, stride=2, padding=1))
            c = w
        self.mid = CondResBlock(c, c, cdim, kernel)
        self.upsample = nn.ModuleList()
        self.up = nn.ModuleList()
        for w in reversed(widths):
            self.upsample.append(nn.ConvTranspose1d(c, c, 4, stride=2, padding=1))
            self.up.append(CondResBlock(c + w, w, cdim, kernel))
            c = w
        self.out = nn.Conv1d(c, action_dim, 1)

    def forward(self, a_k: torch.Tensor, k: torch.Tensor, f_cond: torch.Tensor) -> torch.Tensor:
        # a_k: (B, H, d_a); k: (B,); f_cond: (B, cond_dim)
        k = torch.as_tensor(k).reshape(-1).expand(a_k.shape[0])
        cond = torch.cat([f_cond, self.time_mlp(timestep_embedding(k, self.time_dim, a_k.dtype))], dim=-1)
        x = a_k.transpose(1, 2)
        skips = []
        for block, down in zip(self.down, self.downsample):
            x = block(x, cond)
            skips.append(x)
            x = down(x)
        x = self.mid(x, cond)
        for up, block in zip(self.upsample, self.up):
            x = up(x)
            x = block(torch.cat([x, skips.pop()], dim=1), cond)
        return self.out(x).transpose(1, 2)


def ddpm_step(a_k: torch.Tensor, k: int, eps_hat: torch.Tensor, schedule: DiffusionSchedule,
              generator: torch.Generator | None = None) -> torch.Tensor:
    """Ancestral reverse step with ``sigma_k^2 = beta_k``; noiseless at k = 1."""
    if not 1 <= k <= schedule.T:
        raise ValueError(f"step {k} outside 1..{schedule.T}")
    beta = float(schedule.beta_at(k))
    abar = float(schedule.alpha_bar(k))
    mean = (a_k - beta / math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(1.0 - beta)
    if k == 1:
        return mean
    z = torch.randn(a_k.shape, generator=generator, dtype=a_k.dtype)
    return mean + math.sqrt(beta) * z


def ddim_timesteps(T: int, steps: int) -> list[int]:
    """Evenly spaced descending sub-sequence of 1..T that always starts at T."""
    if not 1 <= steps <= T:
        raise ValueError(f"DDIM steps must lie in 1..{T}, got {steps}")
    ks = np.round(np.linspace(T, 0, steps + 1)).astype(int)[:-1]
    return [int(k) for k in ks]


def ddim_sample(denoiser: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
                shape: tuple[int, ...], schedule: DiffusionSchedule, steps: int = 20,
                generator: torch.Generator | None = None, a_T: torch.Tensor | None = None,
                clip: float | None = None, dtype=DTYPE) -> torch.Tensor:
    """Deterministic (eta = 0) DDIM trajectory from Gaussian noise to ``a^0``.

    ``denoiser(a_k, k)`` returns the noise estimate; ``k`` is a (B,) long tensor.
    """
    ks = ddim_timesteps(schedule.T, steps)
    a = torch.randn(shape, generator=generator, dtype=dtype) if a_T is None else a_T.clone()
    for i, k in enumerate(ks):
        k_prev = ks[i + 1] if i + 1 < len(ks) else 0
        abar = float(schedule.alpha_bar(k))
        abar_prev = float(schedule.alpha_bar(k_prev))
        eps = denoiser(a, torch.full((shape[0],), k, dtype=torch.long))
        a0 = (a - math.sqrt(1.0 - abar) * eps) / math.sqrt(abar)
        if clip is not None:
            a0 = a0.clamp(-clip, clip)
            eps = (a - math.sqrt(abar) * a0) / math.sqrt(1.0 - abar)
        a = math.sqrt(abar_prev) * a0 + math.sqrt(1.0 - abar_prev) * eps
    return a


def sample_timesteps(batch: int, T: int, generator: torch.Generator | None = None) -> torch.Tensor:
    return torch.randint(1, T + 1, (batch,), generator=generator)


def diffusion_loss(predict: Callable[[torch.Tensor, torch.Tensor], torch.Tensor], a0: torch.Tensor,
                   schedule: DiffusionSchedule, generator: torch.Generator | None = None) -> torch.Tensor:
    """Mean over the batch of ``||eps - eps_theta(a_k, k)||^2`` with per-sample ``k``."""
    if a0.shape[0] == 0:
        raise ValueError("empty batch")
    k = sample_timesteps(a0.shape[0], schedule.T, generator)
    a_k, eps = q_sample(a0, k.numpy(), schedule, generator)
    eps_hat = predict(a_k, k)
    return ((eps - eps_hat) ** 2).flatten(1).sum(dim=1).mean()
