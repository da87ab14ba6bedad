"""Finite-difference audit of every differentiable block, in float64.

Each check rebuilds its module at a fresh random point (new parameters and
inputs) and compares autograd against central differences on sampled
coordinates of every parameter and continuous input.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from . import diffusion as dif
from .fusion import AMAM, Conditioner, entropy_reg
from .numerics import GradReport, gradient_check, seeded_rng
from .perception import FiLM, GraphEncoder, ImageEncoder, PointCloudEncoder, TactileEncoder
from .policy import AdmDpNet, NetDims

TOLERANCE = 1e-4
F64 = torch.float64

# small widths keep the probe count low; the code paths are the production ones.
# U-Net base 16 keeps >= 2 channels per norm group: with one, conv biases cancel
# exactly and the check would compare noise against a zero gradient
SMALL = NetDims(image_feat=16, pc_feat=16, vision_feat=16, tactile_feat=16, graph_feat=16, fusion_dim=16,
                gate_hidden=16, lang_dim=8, unet_base=16, pc_hidden=16)


def _leaf(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=F64).clone().requires_grad_(True)


def _probe(rng: np.random.Generator, out: torch.Tensor) -> torch.Tensor:
    # random projection so every output coordinate matters
    return torch.as_tensor(rng.standard_normal(tuple(out.shape)) / np.sqrt(out.numel()), dtype=F64)


def _named(module: torch.nn.Module, **inputs) -> list[tuple[str, torch.Tensor]]:
    return [(f"input.{k}", v) for k, v in inputs.items()] + list(module.named_parameters())


def _projected(module, rng, fn):
    w = {}

    def loss():
        out = fn()
        if "w" not in w:
            w["w"] = _probe(rng, out)
        return (out * w["w"]).sum()
    return loss


def _image(rng):
    m = ImageEncoder(16).to(F64)
    img = _leaf(rng.uniform(0, 1, (2, 12, 12, 3)))
    return _projected(m, rng, lambda: m(img)), _named(m, image=img)


def _pointcloud(rng):
    m = PointCloudEncoder(16, 16).to(F64)
    pc = _leaf(rng.standard_normal((2, 24, 6)))
    return _projected(m, rng, lambda: m(pc)), _named(m, cloud=pc)


def _film(rng):
    m = FiLM(8, 12).to(F64)
    x, c = _leaf(rng.standard_normal((3, 12))), _leaf(rng.standard_normal((3, 8)))
    return _projected(m, rng, lambda: m(x, c)), _named(m, x=x, cond=c)


def _tactile(rng):
    m = TactileEncoder(16, hidden=16).to(F64)
    # keep readings away from the clip bound and from zero
    t = _leaf(rng.uniform(0.1, 3.0, (2, 2, 4, 4)))
    return _projected(m, rng, lambda: m(t)), _named(m, tactile=t)


def _graph(rng):
    m = GraphEncoder(16, hidden=8).to(F64)
    n = int(rng.choice([2, 3, 5]))
    pos = _leaf(rng.uniform(-0.3, 0.3, (2, n, 3)))
    ego = torch.as_tensor(rng.integers(0, n, 2))
    return _projected(m, rng, lambda: m(pos, ego)), _named(m, tcps=pos)


def _amam(rng):
    m = AMAM((8, 6, 5), fusion_dim=10, hidden=12, tau=float(rng.uniform(0.5, 2.0))).to(F64)
    fs = [_leaf(rng.standard_normal((3, d))) for d in (8, 6, 5)]
    w = {}

    def loss():
        fused, alpha = m(fs)
        if "w" not in w:
            w["w"] = _probe(rng, fused)
        return (fused * w["w"]).sum() + entropy_reg(alpha, 0.01).sum()
    return loss, _named(m, f_v=fs[0], f_t=fs[1], f_g=fs[2])


def _conditioner(rng):
    m = Conditioner(8, 10, 5).to(F64)
    f, q, l = (_leaf(rng.standard_normal((3, d))) for d in (10, 5, 8))
    return _projected(m, rng, lambda: m(f, q, l)), _named(m, f_vtg=f, q=q, f_l=l)


def _unet(rng):
    m = dif.NoisePredictor(4, 12, base=16, levels=2, time_dim=16).to(F64)
    a = _leaf(rng.standard_normal((2, 8, 4)))
    c = _leaf(rng.standard_normal((2, 12)))
    k = torch.as_tensor(rng.integers(1, 101, 2))
    return _projected(m, rng, lambda: m(a, k, c)), _named(m, a_k=a, f_cond=c)


def _total_loss(rng):
    table = rng.standard_normal((2, SMALL.lang_dim))
    net = AdmDpNet(SMALL, table / np.linalg.norm(table, axis=1, keepdims=True), tau=1.0)
    # one sample and 8x8 images: mean pooling over many pixels shrinks each pixel's
    # gradient toward the float64 differencing floor (~1e-10 at a loss near 30)
    b, f = 1, SMALL.n_history
    hist = {"image": _leaf(rng.uniform(0, 1, (b, f, 8, 8, 3))),
            "cloud": _leaf(rng.standard_normal((b, f, 16, 6))),
            "tactile": _leaf(rng.uniform(0.1, 3.0, (b, f, 2, 4, 4))),
            "q": _leaf(rng.standard_normal((b, f, 5))),
            "tcps": _leaf(rng.uniform(-0.3, 0.3, (b, f, 2, 3))),
            "instruction": torch.as_tensor(rng.integers(0, 2, (b, f))),
            "ego": torch.as_tensor(rng.integers(0, 2, (b, f)))}
    a0 = _leaf(rng.uniform(-1, 1, (b, SMALL.horizon, 4)))
    sched = dif.make_schedule(100)
    seed = int(rng.integers(2**62))

    def loss():
        gen = torch.Generator().manual_seed(seed)   # identical noise and timesteps on every call
        return net.loss(hist, a0, sched, 0.01, gen)[0]
    inputs = {k: v for k, v in hist.items() if v.is_floating_point()}
    named = [(f"input.{k}", v) for k, v in inputs.items()] + [("input.a0", a0)] + list(net.named_parameters())
    return loss, named


STEP = 1e-5
# Central differences in float64 carry a roundoff floor of roughly ulp(L) / 2h; at
# h = 1e-5 and a loss near 30 that is ~1e-9 absolute, so entries far below 1e-5
# (the GAT destination-attention vector is the usual one) sit near the tolerance.
STEPS: dict[str, float] = {}

CHECKS: dict[str, Callable] = {
    "image_encoder": _image,
    "pointcloud_encoder": _pointcloud,
    "film": _film,
    "tactile_encoder": _tactile,
    "graph_encoder": _graph,
    "amam_fusion": _amam,
    "instruction_film": _conditioner,
    "noise_unet": _unet,
    "total_loss": _total_loss,
}


@dataclass
class CheckResult:
    report: GradReport
    points: int
    seconds: float


def run_gradcheck(points: int = 10, seed: int = 0, only=None, corrupt: float = 0.0,
                  coords_per_param: int = 4) -> dict[str, CheckResult]:
    """``corrupt`` perturbs every analytic gradient; it is the negative-control hook."""
    names = list(CHECKS) if not only else list(only)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown check(s) {unknown}; available: {', '.join(CHECKS)}")
    out = {}
    for name in names:
        c = list(CHECKS).index(name)      # a subset sees the same points as the full run
        t0 = time.perf_counter()
        merged = GradReport(name, tolerance=TOLERANCE)
        for p in range(points):
            rng = seeded_rng(seed, c, p)
            with torch.random.fork_rng(devices=[]):
                torch.manual_seed(int(rng.integers(2**62)))
                loss_fn, named = CHECKS[name](rng)
            merged.merge(gradient_check(name, loss_fn, named, rng, coords_per_param=coords_per_param,
                                        step=STEPS.get(name, STEP), tolerance=TOLERANCE, corrupt=corrupt))
        out[name] = CheckResult(merged, points, time.perf_counter() - t0)
    return out


def format_results(results: dict[str, CheckResult]) -> str:
    lines = []
    for name, r in results.items():
        rep = r.report
        worst_key = max(rep.max_rel_err, key=rep.max_rel_err.get) if rep.max_rel_err else "-"
        lines.append(f"{'PASS' if rep.passed else 'FAIL'}  {name:<20} max rel-err {rep.worst:.2e} "
                     f"(worst at {worst_key}; {r.points} points, {r.seconds:.1f}s)")
    return "\n".join(lines)
