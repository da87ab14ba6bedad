"""Adaptive modality gating, entropy regularisation and instruction conditioning."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .numerics import seeded_rng
from .perception import FiLM

MODALITIES = ("vision", "tactile", "graph")


class ConfigurationError(ValueError):
    pass


def softmax_weights(logits: torch.Tensor, tau: float, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Temperature softmax over the last axis; masked entries get weight exactly 0."""
    if tau <= 0:
        raise ConfigurationError(f"temperature must be positive, got {tau}")
    z = logits / tau
    if mask is not None:
        z = z.masked_fill(~mask, float("-inf"))
    return torch.softmax(z, dim=-1)


def entropy_reg(alpha: torch.Tensor, lam: float, sign: float = 1.0) -> torch.Tensor:
    """``-lam * sum(alpha * log alpha)`` per row, with ``0 log 0 = 0``.

    ``sign=-1`` flips the objective so that one-hot weights are penalised instead.
    """
    if lam < 0:
        raise ConfigurationError("lambda must be non-negative")
    safe = torch.where(alpha > 0, alpha, torch.ones_like(alpha))
    plogp = torch.where(alpha > 0, alpha * torch.log(safe), torch.zeros_like(alpha))
    return -sign * lam * plogp.sum(dim=-1)


class AMAM(nn.Module):
    """Gate MLP over raw ``[f_v; f_t; f_g]`` plus per-modality projections to a shared width."""

    def __init__(self, dims: Sequence[int] = (64, 64, 64), fusion_dim: int = 128,
                 hidden: int = 128, tau: float = 1.0):
        super().__init__()
        if tau <= 0:
            raise ConfigurationError(f"temperature must be positive, got {tau}")
        self.tau = tau
        self.gate = nn.Sequential(nn.Linear(sum(dims), hidden), nn.SiLU(), nn.Linear(hidden, 3))
        self.proj = nn.ModuleList(nn.Linear(d, fusion_dim) for d in dims)

    def weights(self, feats: Sequence[torch.Tensor], mask: torch.Tensor | None = None) -> torch.Tensor:
        logits = self.gate(torch.cat(list(feats), dim=-1))
        return softmax_weights(logits, self.tau, mask)

    def fuse(self, feats: Sequence[torch.Tensor], alpha: torch.Tensor) -> torch.Tensor:
        projected = torch.stack([p(f) for p, f in zip(self.proj, feats)], dim=1)
        return (alpha.unsqueeze(-1) * projected).sum(dim=1)

    def forward(self, feats, mask=None, fixed_alpha: torch.Tensor | None = None):
        alpha = self.weights(feats, mask) if fixed_alpha is None else fixed_alpha
        return self.fuse(feats, alpha), alpha


class InstructionTable:
    """Frozen unit-norm embeddings for a small instruction vocabulary.

    Stands in for a frozen text encoder: never registered as a parameter.
    """

    def __init__(self, vocabulary: Sequence[str], dim: int = 64, seed: int = 0):
        self.vocabulary = list(vocabulary)
        vecs = seeded_rng(seed, 0x1E7).standard_normal((len(self.vocabulary), dim))
        self.table = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)

    @classmethod
    def from_array(cls, vocabulary, table: np.ndarray) -> "InstructionTable":
        obj = cls.__new__(cls)
        obj.vocabulary = list(vocabulary)
        obj.table = np.asarray(table, dtype=np.float64)
        return obj

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def embed(self, instruction_id: int) -> np.ndarray:
        if not 0 <= int(instruction_id) < len(self.vocabulary):
            raise KeyError(f"unknown instruction id {instruction_id}; vocabulary: "
                           + ", ".join(f"{i}={s!r}" for i, s in enumerate(self.vocabulary)))
        return self.table[int(instruction_id)].copy()

    def lookup(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= len(self.vocabulary)):
            bad = ids[(ids < 0) | (ids >= len(self.vocabulary))][0]
            self.embed(int(bad))
        return torch.as_tensor(self.table, dtype=torch.float64)[ids]


class Conditioner(FiLM):
    """``f_cond = gamma(f_l) * [f_vtg; q] + beta(f_l)``."""

    def __init__(self, lang_dim: int, fused_dim: int, proprio_dim: int):
        super().__init__(lang_dim, fused_dim + proprio_dim)

    def forward(self, f_vtg: torch.Tensor, q: torch.Tensor, f_l: torch.Tensor) -> torch.Tensor:
        return super().forward(torch.cat([f_vtg, q], dim=-1), f_l)


def uniform_alpha(batch: int, dtype=torch.float64) -> torch.Tensor:
    return torch.full((batch, 3), 1.0 / 3.0, dtype=dtype)


UNIFORM_ENTROPY = math.log(3.0)
