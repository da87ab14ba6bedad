"""The full per-agent network: encoders -> AMAM -> FiLM conditioning -> noise predictor."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
from torch import nn

from . import diffusion as dif
from .fusion import AMAM, Conditioner, entropy_reg, uniform_alpha
from .perception import FiLM, GraphEncoder, ImageEncoder, PointCloudEncoder, TactileEncoder

OBS_KEYS = ("image", "cloud", "tactile", "q", "instruction", "tcps", "ego")


@dataclass(frozen=True)
class AblationFlags:
    no_pc: bool = False
    no_tact: bool = False
    no_graph: bool = False
    no_amam: bool = False

    @classmethod
    def from_names(cls, names) -> "AblationFlags":
        names = [n for n in (names or []) if n and n != "full"]
        valid = {f.name for f in fields(cls)}
        unknown = [n for n in names if n not in valid]
        if unknown:
            raise ValueError(f"unknown ablation(s) {unknown}; choose from {sorted(valid)}")
        return cls(**{n: True for n in names})

    @property
    def label(self) -> str:
        on = [k for k, v in asdict(self).items() if v]
        return "+".join(on) if on else "full"

    def gate_mask(self) -> torch.Tensor | None:
        if not (self.no_tact or self.no_graph):
            return None
        return torch.tensor([True, not self.no_tact, not self.no_graph])


@dataclass(frozen=True)
class NetDims:
    image_feat: int = 64
    pc_feat: int = 128
    vision_feat: int = 64
    tactile_feat: int = 64
    graph_feat: int = 64
    fusion_dim: int = 128
    gate_hidden: int = 128
    lang_dim: int = 64
    proprio_dim: int = 5
    action_dim: int = 4
    horizon: int = 8
    n_history: int = 3
    unet_base: int = 32
    unet_levels: int = 2
    unet_kernel: int = 3
    pc_hidden: int = 64


PRESETS = {
    "toy": NetDims(),
    "paper": NetDims(image_feat=512, pc_feat=1024, vision_feat=512, tactile_feat=64, graph_feat=64,
                     fusion_dim=512, pc_hidden=256),
}


class AdmDpNet(nn.Module):
    def __init__(self, dims: NetDims, instruction_table: np.ndarray, tau: float = 1.0,
                 flags: AblationFlags = AblationFlags(), dtype=torch.float64):
        super().__init__()
        self.dims = dims
        self.flags = flags
        self.image_enc = ImageEncoder(dims.image_feat)
        self.pc_enc = PointCloudEncoder(dims.pc_feat, dims.pc_hidden)
        self.vision_film = FiLM(dims.pc_feat, dims.vision_feat)
        # the image head must emit the vision width for the elementwise product
        if dims.image_feat != dims.vision_feat:
            raise ValueError("image feature width must equal vision feature width")
        self.tactile_enc = TactileEncoder(dims.tactile_feat)
        self.graph_enc = GraphEncoder(dims.graph_feat)
        self.amam = AMAM((dims.vision_feat, dims.tactile_feat, dims.graph_feat), dims.fusion_dim,
                         dims.gate_hidden, tau)
        self.conditioner = Conditioner(dims.lang_dim, dims.fusion_dim, dims.proprio_dim)
        self.register_buffer("instruction_table", torch.as_tensor(instruction_table, dtype=torch.float64))
        self.cond_dim = dims.fusion_dim + dims.proprio_dim
        self.noise_pred = dif.NoisePredictor(dims.action_dim, self.cond_dim * dims.n_history,
                                             dims.unet_base, dims.unet_levels, dims.unet_kernel)
        self.to(dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.instruction_table.dtype

    # -- per-frame encoding -------------------------------------------------
    @staticmethod
    def ego_cloud(obs: dict[str, torch.Tensor]) -> torch.Tensor:
        """Point xyz relative to the agent's own TCP (first three proprio entries)."""
        pc = obs["cloud"]
        return torch.cat([pc[..., :3] - obs["q"][:, None, :3], pc[..., 3:]], dim=-1)

    def modality_features(self, obs: dict[str, torch.Tensor]):
        b = obs["image"].shape[0]
        zeros = lambda d: torch.zeros(b, d, dtype=self.dtype)
        f_img = self.image_enc(obs["image"])
        f_pc = zeros(self.dims.pc_feat) if self.flags.no_pc else self.pc_enc(self.ego_cloud(obs))
        f_v = self.vision_film(f_img, f_pc)
        f_t = zeros(self.dims.tactile_feat) if self.flags.no_tact else self.tactile_enc(obs["tactile"])
        f_g = zeros(self.dims.graph_feat) if self.flags.no_graph else self.graph_enc(obs["tcps"], obs["ego"])
        return f_v, f_t, f_g

    def encode_frame(self, obs: dict[str, torch.Tensor]):
        """Returns ``(f_cond, alpha)`` for a batch of single frames."""
        feats = self.modality_features(obs)
        fixed = uniform_alpha(feats[0].shape[0], self.dtype) if self.flags.no_amam else None
        f_vtg, alpha = self.amam(feats, self.flags.gate_mask(), fixed)
        f_l = self.instruction_table[obs["instruction"]]
        return self.conditioner(f_vtg, obs["q"], f_l), alpha

    def encode_history(self, hist: dict[str, torch.Tensor]):
        """``hist`` tensors are (B, F, ...); returns ``(cond (B, F*dc), alpha (B, F, 3))``."""
        b, nf = hist["image"].shape[:2]
        flat = {k: v.reshape((b * nf,) + tuple(v.shape[2:])) for k, v in hist.items()}
        f_cond, alpha = self.encode_frame(flat)
        return f_cond.reshape(b, nf * self.cond_dim), alpha.reshape(b, nf, 3)

    # -- objectives ---------------------------------------------------------
    def loss(self, hist, a0: torch.Tensor, schedule: dif.DiffusionSchedule, lam: float,
             generator: torch.Generator | None = None, entropy_sign: float = 1.0):
        cond, alpha = self.encode_history(hist)
        l_diff = dif.diffusion_loss(lambda a, k: self.noise_pred(a, k, cond), a0, schedule, generator)
        lam_eff = 0.0 if self.flags.no_amam else lam
        l_reg = entropy_reg(alpha.reshape(-1, 3), lam_eff, entropy_sign).mean()
        return l_diff + l_reg, l_diff, l_reg, alpha

    @torch.no_grad()
    def sample(self, hist, schedule: dif.DiffusionSchedule, steps: int = 20,
               generator: torch.Generator | None = None):
        cond, alpha = self.encode_history(hist)
        shape = (cond.shape[0], self.dims.horizon, self.dims.action_dim)
        chunk = dif.ddim_sample(lambda a, k: self.noise_pred(a, k, cond), shape, schedule, steps,
                                generator, clip=1.0, dtype=self.dtype)
        return chunk, alpha
