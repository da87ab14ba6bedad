"""Differentiable substrate shared by every learnable module.

Gradients come from torch autograd in float64. The finite-difference oracle
below never touches autograd, so the two routes stay independent.
"""
from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

logger = logging.getLogger(__name__)

DTYPE = torch.float64


class NonFiniteError(FloatingPointError):
    """Raised when a loss or gradient stops being finite."""


def seeded_rng(seed: int, *stream: int) -> np.random.Generator:
    """Deterministic Philox stream for ``seed``; extra ints split sub-streams.

    ``seeded_rng(s, episode, agent)`` never overlaps ``seeded_rng(s, episode)``.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(s) & 0xFFFFFFFFFFFFFFFF for s in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def torch_generator(rng: np.random.Generator) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(int(rng.integers(0, 2**63 - 1)))
    return gen


@contextlib.contextmanager
def _nonfinite_probe():
    """Record the first module whose forward output is not finite."""
    hits: list[str] = []

    def hook(module, inputs, output):
        if hits:
            return
        outs = output if isinstance(output, (tuple, list)) else (output,)
        for out in outs:
            if torch.is_tensor(out) and out.is_floating_point() and not torch.isfinite(out).all():
                hits.append(f"{type(module).__name__} output")
                return

    handle = torch.nn.modules.module.register_module_forward_hook(hook)
    try:
        yield hits
    finally:
        handle.remove()


def forward_backward(loss_fn: Callable[[], torch.Tensor],
                     params: Iterable[torch.Tensor]) -> tuple[float, list[torch.Tensor]]:
    """Evaluate ``loss_fn`` and populate ``.grad`` on every parameter.

    Parameters that do not influence the loss get an explicit zero gradient.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = loss_fn()
    if not torch.isfinite(loss):
        with _nonfinite_probe() as hits, torch.no_grad():
            loss_fn()
        where = hits[0] if hits else "loss reduction"
        raise NonFiniteError(f"non-finite loss {loss.item()!r}; first non-finite intermediate: {where}")
    loss.backward()
    grads = []
    for p in params:
        if p.grad is None:
            p.grad = torch.zeros_like(p)
        grads.append(p.grad)
    return float(loss.detach()), grads


def finite_difference_grad(loss_fn: Callable[[], torch.Tensor | float],
                           params: Sequence[torch.Tensor],
                           step: float = 1e-5,
                           coords: dict[int, np.ndarray] | None = None) -> list[np.ndarray]:
    """Central differences ``(f(x+h) - f(x-h)) / 2h`` per coordinate.

    ``coords`` optionally maps a parameter index to the flat indices to probe;
    unprobed entries are returned as NaN.
    """
    if step <= 0:
        raise ValueError("finite-difference step must be positive")
    out = []
    with torch.no_grad():
        for i, p in enumerate(params):
            flat = p.data.view(-1)
            g = np.full(flat.numel(), np.nan)
            idx = range(flat.numel()) if coords is None or i not in coords else coords[i]
            if coords is not None and i not in coords:
                idx = []
            for j in idx:
                orig = flat[j].item()
                flat[j] = orig + step
                fp = float(loss_fn())
                flat[j] = orig - step
                fm = float(loss_fn())
                flat[j] = orig
                g[j] = (fp - fm) / (2.0 * step)
            out.append(g.reshape(tuple(p.shape)))
    return out


def relative_error(analytic, numeric) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-8)


@dataclass
class GradReport:
    name: str
    max_rel_err: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance

    def merge(self, other: "GradReport") -> None:
        for k, v in other.max_rel_err.items():
            self.max_rel_err[k] = max(v, self.max_rel_err.get(k, 0.0))


def gradient_check(name: str,
                   loss_fn: Callable[[], torch.Tensor],
                   named_params: Sequence[tuple[str, torch.Tensor]],
                   rng: np.random.Generator,
                   coords_per_param: int = 6,
                   step: float = 1e-5,
                   tolerance: float = 1e-4,
                   corrupt: float = 0.0) -> GradReport:
    """Compare autograd against central differences on sampled coordinates.

    ``corrupt`` scales the analytic gradient by ``1 + corrupt`` and exists only
    as a negative control.
    """
    names = [n for n, _ in named_params]
    params = [p for _, p in named_params]
    forward_backward(loss_fn, params)
    analytic = [p.grad.detach().clone().numpy() * (1.0 + corrupt) for p in params]
    coords = {}
    for i, p in enumerate(params):
        n = p.numel()
        k = min(coords_per_param, n)
        coords[i] = rng.choice(n, size=k, replace=False)
    numeric = finite_difference_grad(loss_fn, params, step, coords)
    report = GradReport(name, tolerance=tolerance)
    for i, nm in enumerate(names):
        idx = coords[i]
        err = relative_error(analytic[i].reshape(-1)[idx], numeric[i].reshape(-1)[idx])
        report.max_rel_err[nm] = float(err.max()) if err.size else 0.0
    return report


class AdamOptimizer:
    """Adaptive-moment optimizer (0.9 / 0.999, eps 1e-8) that skips bad steps."""

    def __init__(self, params: Iterable[torch.Tensor], lr: float = 1e-3):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = [p for p in params if p.requires_grad]
        self._opt = torch.optim.Adam(self.params, lr=lr, betas=(0.9, 0.999), eps=1e-8)
        self.skipped = 0

    @property
    def lr(self) -> float:
        return self._opt.param_groups[0]["lr"]

    def zero_grad(self) -> None:
        self._opt.zero_grad(set_to_none=True)

    def step(self) -> bool:
        for p in self.params:
            if p.grad is not None and not torch.isfinite(p.grad).all():
                self.skipped += 1
                logger.warning("skipping optimizer step: non-finite gradient (%d skipped)", self.skipped)
                return False
        self._opt.step()
        return True


def optimizer_step(params: Sequence[torch.Tensor],
                   state: AdamOptimizer | None = None,
                   lr: float = 1e-3) -> AdamOptimizer:
    """Apply one adaptive-moment update using the gradients stored on ``params``.

    Returns the optimizer state so callers can thread it through a loop.
    """
    if state is None:
        state = AdamOptimizer(params, lr=lr)
    state.step()
    return state
