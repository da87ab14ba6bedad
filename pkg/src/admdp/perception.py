"""Observation encoders: RGB, point cloud, tactile and the shared-TCP graph."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

GRAPH_EPS = 1e-6
TACTILE_CLIP = 10.0
POS_SCALE = 0.35           # m, workspace half-extent

# taxel (row, col) -> (x, y) in [-1, 1]^2; row 0 is the fingertip row
_GRID = np.linspace(-1.0, 1.0, 4)
TAXEL_X = np.tile(_GRID, 4).reshape(4, 4)
TAXEL_Y = np.repeat(_GRID, 4).reshape(4, 4)


class EmptyCropError(ValueError):
    pass


def preprocess_pointcloud(raw: np.ndarray, workspace: tuple[np.ndarray, np.ndarray],
                          n_points: int, rng: np.random.Generator) -> np.ndarray:
    """Crop ``raw`` (M, 6) to the workspace box and subsample to exactly ``n_points`` rows.

    Falls back to sampling with replacement when fewer than ``n_points`` survive.
    """
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = (np.asarray(b, dtype=np.float64) for b in workspace)
    inside = np.all((raw[:, :3] >= lo) & (raw[:, :3] <= hi), axis=1) if len(raw) else np.zeros(0, bool)
    kept = raw[inside]
    if len(kept) == 0:
        raise EmptyCropError("workspace contains no points")
    replace = len(kept) < n_points
    idx = rng.choice(len(kept), size=n_points, replace=replace)
    return kept[idx]


def tactile_dynamics(frame) -> tuple[float, float, np.ndarray]:
    """Resultant force, finger0-minus-finger1 differential, and per-finger centroids."""
    t = np.asarray(frame, dtype=np.float64).reshape(2, 4, 4)
    sums = t.sum(axis=(1, 2))
    centroids = np.zeros((2, 2))
    for f in range(2):
        if sums[f] > 0:
            centroids[f] = [(t[f] * TAXEL_X).sum() / sums[f], (t[f] * TAXEL_Y).sum() / sums[f]]
    return float(sums.sum()), float(sums[0] - sums[1]), centroids


def tactile_dynamics_torch(t: torch.Tensor) -> torch.Tensor:
    """Batched version of :func:`tactile_dynamics`; ``t`` is (B, 2, 4, 4). Returns (B, 6)."""
    gx = torch.as_tensor(TAXEL_X, dtype=t.dtype)
    gy = torch.as_tensor(TAXEL_Y, dtype=t.dtype)
    sums = t.sum(dim=(2, 3))
    safe = torch.where(sums > 0, sums, torch.ones_like(sums))
    cx = torch.where(sums > 0, (t * gx).sum(dim=(2, 3)) / safe, torch.zeros_like(sums))
    cy = torch.where(sums > 0, (t * gy).sum(dim=(2, 3)) / safe, torch.zeros_like(sums))
    resultant = sums.sum(dim=1, keepdim=True)
    differential = (sums[:, 0] - sums[:, 1]).unsqueeze(1)
    return torch.cat([resultant, differential, cx[:, :1], cy[:, :1], cx[:, 1:], cy[:, 1:]], dim=1)


@dataclass
class TcpGraph:
    positions: np.ndarray    # (n, 3)
    ego_index: int
    edge_weights: np.ndarray  # (n, n), zero diagonal

    @property
    def ego_flags(self) -> np.ndarray:
        flags = np.zeros(len(self.positions))
        flags[self.ego_index] = 1.0
        return flags


def build_tcp_graph(tcps, ego_index: int, epsilon: float = GRAPH_EPS) -> TcpGraph:
    pos = np.asarray(tcps, dtype=np.float64).reshape(-1, 3)
    if len(pos) < 1:
        raise ValueError("graph needs at least one node")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not 0 <= ego_index < len(pos):
        raise IndexError(f"ego index {ego_index} out of range for {len(pos)} nodes")
    return TcpGraph(pos, int(ego_index), edge_weights_np(pos, epsilon))


def edge_weights_np(pos: np.ndarray, epsilon: float = GRAPH_EPS) -> np.ndarray:
    d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    e = 1.0 / (d + epsilon)
    np.fill_diagonal(e, 0.0)
    return e


class ImageEncoder(nn.Module):
    """Three strided conv blocks (8-16-32) with coordinate channels, mean pool, affine head."""

    def __init__(self, out_dim: int = 64, channels=(8, 16, 32)):
        super().__init__()
        layers, c_in = [], 5
        for c in channels:
            layers += [nn.Conv2d(c_in, c, 3, stride=2, padding=1), nn.SiLU()]
            c_in = c
        self.convs = nn.Sequential(*layers)
        self.head = nn.Linear(c_in, out_dim)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        # img: (B, H, W, 3) in [0, 1]
        x = img.permute(0, 3, 1, 2)
        b, _, h, w = x.shape
        ys = torch.linspace(-1, 1, h, dtype=x.dtype).view(1, 1, h, 1).expand(b, 1, h, w)
        xs = torch.linspace(-1, 1, w, dtype=x.dtype).view(1, 1, 1, w).expand(b, 1, h, w)
        x = self.convs(torch.cat([x, xs, ys], dim=1))
        return self.head(x.mean(dim=(2, 3)))


class PointCloudEncoder(nn.Module):
    """Shared per-point MLP followed by coordinate-wise max pooling (no T-Net, no BatchNorm)."""

    def __init__(self, out_dim: int = 128, hidden: int = 64, pos_scale: float = POS_SCALE):
        super().__init__()
        self.pos_scale = pos_scale
        self.mlp = nn.Sequential(nn.Linear(6, hidden), nn.SiLU(), nn.Linear(hidden, out_dim))

    def forward(self, pc: torch.Tensor) -> torch.Tensor:
        # xyz in workspace units so coordinates and colours share a scale
        x = torch.cat([pc[..., :3] / self.pos_scale, pc[..., 3:]], dim=-1)
        return self.mlp(x).amax(dim=1)


class FiLM(nn.Module):
    """``gamma(c) * x + beta(c)`` with affine gamma and beta."""

    def __init__(self, cond_dim: int, feat_dim: int):
        super().__init__()
        self.gamma = nn.Linear(cond_dim, feat_dim)
        self.beta = nn.Linear(cond_dim, feat_dim)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        return self.gamma(cond) * x + self.beta(cond)


class TactileEncoder(nn.Module):
    def __init__(self, out_dim: int = 64, channels: int = 16, kernel: int = 3, pool: int = 4,
                 hidden: int = 64, clip: float = TACTILE_CLIP):
        super().__init__()
        self.clip = clip
        self.conv = nn.Conv1d(3, channels, kernel, padding=kernel // 2)
        self.pool = nn.AdaptiveAvgPool1d(pool)
        self.ffn = nn.Sequential(nn.Linear(2 * channels * pool + 6, hidden), nn.SiLU(),
                                 nn.Linear(hidden, out_dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        # t: (B, 2, 4, 4) raw forces in newtons
        b = t.shape[0]
        logf = torch.log1p(t.clamp(0.0, self.clip)).reshape(b * 2, 1, 16)
        pos = torch.stack([torch.as_tensor(TAXEL_X, dtype=t.dtype).reshape(16),
                           torch.as_tensor(TAXEL_Y, dtype=t.dtype).reshape(16)])
        x = torch.cat([logf, pos.unsqueeze(0).expand(b * 2, 2, 16)], dim=1)
        conv = self.pool(F.silu(self.conv(x))).reshape(b, -1)
        return self.ffn(torch.cat([conv, tactile_dynamics_torch(t)], dim=1))


def smooth_leaky_relu(x: torch.Tensor, slope: float = 0.2) -> torch.Tensor:
    """``slope * x + (1 - slope) * softplus(x)``: the leaky rectifier without its kink.

    With the piecewise-linear version, a row whose scores share a sign has a constant
    slope and the row softmax cancels the destination term exactly.
    """
    return slope * x + (1.0 - slope) * F.softplus(x)


class GraphAttentionLayer(nn.Module):
    """Single-head attention with additive ``log(e_ij)`` bias; self edges get bias 0."""

    def __init__(self, in_dim: int, out_dim: int, slope: float = 0.2):
        super().__init__()
        self.lin = nn.Linear(in_dim, out_dim, bias=False)
        self.att_src = nn.Parameter(torch.empty(out_dim))
        self.att_dst = nn.Parameter(torch.empty(out_dim))
        self.bias = nn.Parameter(torch.zeros(out_dim))
        self.slope = slope
        nn.init.normal_(self.att_src, std=out_dim ** -0.5)
        nn.init.normal_(self.att_dst, std=out_dim ** -0.5)

    def forward(self, x: torch.Tensor, log_bias: torch.Tensor) -> torch.Tensor:
        # x: (B, n, d); log_bias: (B, n, n)
        h = self.lin(x)
        scores = (h @ self.att_dst).unsqueeze(2) + (h @ self.att_src).unsqueeze(1)
        scores = smooth_leaky_relu(scores, self.slope) + log_bias
        attn = torch.softmax(scores, dim=-1)
        return attn @ h + self.bias


def graph_log_bias(pos: torch.Tensor, epsilon: float = GRAPH_EPS) -> torch.Tensor:
    d = torch.linalg.vector_norm(pos.unsqueeze(2) - pos.unsqueeze(1), dim=-1)
    n = pos.shape[1]
    eye = torch.eye(n, dtype=torch.bool).expand_as(d)
    return torch.where(eye, torch.zeros_like(d), -torch.log(d + epsilon))


class GraphEncoder(nn.Module):
    """Two attention layers over the TCP graph; the ego node's state is the feature."""

    def __init__(self, out_dim: int = 64, hidden: int = 32, pos_scale: float = POS_SCALE):
        super().__init__()
        self.pos_scale = pos_scale
        self.gat1 = GraphAttentionLayer(4, hidden)
        self.gat2 = GraphAttentionLayer(hidden, hidden)
        self.head = nn.Linear(hidden, out_dim)

    def forward(self, pos: torch.Tensor, ego_index: torch.Tensor) -> torch.Tensor:
        # pos: (B, n, 3); ego_index: (B,) long
        b, n, _ = pos.shape
        flags = F.one_hot(ego_index, n).to(pos.dtype).unsqueeze(-1)
        bias = graph_log_bias(pos)
        # node features in workspace units; edge weights keep metric distances
        h = F.elu(self.gat1(torch.cat([pos / self.pos_scale, flags], dim=-1), bias))
        h = F.elu(self.gat2(h, bias))
        ego = h[torch.arange(b), ego_index]
        return self.head(ego)
