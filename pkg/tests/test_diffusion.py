import math

import numpy as np
import pytest
import torch

from admdp import diffusion as dif

F64 = torch.float64


def test_single_step_schedule():
    s = dif.make_schedule(1)
    np.testing.assert_allclose(s.beta, [1e-4])
    np.testing.assert_allclose(s.alpha_bars, [0.9999])
    assert s.alpha_bar(0) == 1.0


@pytest.mark.parametrize("kind", ["linear", "cosine"])
def test_schedule_invariants(kind):
    s = dif.make_schedule(100, kind)
    assert ((s.beta > 0) & (s.beta < 1)).all()
    assert (np.diff(s.alpha_bars) < 0).all()


def test_linear_alpha_bar_matches_direct_product():
    s = dif.make_schedule(100)
    prod = 1.0
    for b in np.linspace(1e-4, 0.02, 100):
        prod *= 1.0 - b
    assert s.alpha_bar(100) == pytest.approx(prod, rel=1e-12)


def test_cosine_terminal_is_pure_noise():
    assert dif.make_schedule(100, "cosine").alpha_bar(100) < 1e-4


def test_schedule_errors():
    with pytest.raises(ValueError):
        dif.make_schedule(0)
    with pytest.raises(ValueError):
        dif.make_schedule(10, "quadratic")


def test_q_sample_variance_from_zero():
    s = dif.make_schedule(100)
    k = 60
    gen = torch.Generator().manual_seed(0)
    a_k, _ = dif.q_sample(torch.zeros(100_000, dtype=F64), k, s, gen)
    assert a_k.var().item() == pytest.approx(1 - s.alpha_bar(k), rel=0.02)


def test_q_sample_mean_band():
    s = dif.make_schedule(100)
    k, n = 50, 100_000
    a0 = torch.full((n, 4), 0.7, dtype=F64)
    a_k, _ = dif.q_sample(a0, k, s, torch.Generator().manual_seed(1))
    sigma = math.sqrt((1 - s.alpha_bar(k)) / n)
    assert (a_k.mean(0) - math.sqrt(s.alpha_bar(k)) * 0.7).abs().max().item() < 3 * sigma


def test_ddpm_step_inverts_single_step():
    s = dif.make_schedule(1)
    a0 = torch.randn(3, 8, 4, dtype=F64)
    a1, eps = dif.q_sample(a0, 1, s)
    assert (dif.ddpm_step(a1, 1, eps, s) - a0).abs().max().item() < 1e-6


def test_ddpm_step_near_identity_for_tiny_beta():
    s = dif.DiffusionSchedule(np.full(3, 1e-10))
    a = torch.randn(2, 8, 4, dtype=F64)
    out = dif.ddpm_step(a, 2, torch.zeros_like(a), s, torch.Generator().manual_seed(0))
    assert (out - a).abs().max().item() < 1e-4


@pytest.mark.parametrize("steps", [1, 5, 20, 100])
def test_ddim_perfect_denoiser_recovers_a0(steps):
    s = dif.make_schedule(100, "cosine")
    a0 = torch.rand(2, 8, 4, dtype=F64) * 2 - 1
    aT = torch.randn(2, 8, 4, dtype=F64)

    def oracle(a, k):
        # the exact noise that maps a0 to the current a_k
        ab = float(s.alpha_bar(int(k[0])))
        return (a - math.sqrt(ab) * a0) / math.sqrt(1 - ab)
    out = dif.ddim_sample(oracle, a0.shape, s, steps, a_T=aT)
    assert (out - a0).abs().max().item() < 1e-5


def test_ddim_full_steps_matches_reference_loop():
    s = dif.make_schedule(20)
    aT = torch.randn(1, 8, 4, dtype=F64)
    lin = lambda a, k: 0.3 * a
    out = dif.ddim_sample(lin, aT.shape, s, 20, a_T=aT)
    a = aT.clone()
    ab = np.concatenate([[1.0], s.alpha_bars])
    for k in range(20, 0, -1):
        eps = 0.3 * a
        x0 = (a - math.sqrt(1 - ab[k]) * eps) / math.sqrt(ab[k])
        a = math.sqrt(ab[k - 1]) * x0 + math.sqrt(1 - ab[k - 1]) * eps
    assert (out - a).abs().max().item() < 1e-6


def test_ddim_deterministic_bytes():
    net = dif.NoisePredictor(4, 6, base=16).double()
    c = torch.randn(2, 6, dtype=F64)
    s = dif.make_schedule(100, "cosine")
    run = lambda: dif.ddim_sample(lambda a, k: net(a, k, c), (2, 8, 4), s, 20,
                                  torch.Generator().manual_seed(9)).detach().numpy().tobytes()
    assert run() == run()


def test_ddim_timesteps():
    assert dif.ddim_timesteps(100, 20)[0] == 100
    assert len(dif.ddim_timesteps(100, 20)) == 20
    with pytest.raises(ValueError):
        dif.ddim_timesteps(10, 11)


def test_zero_predictor_loss_is_chi_square_mean():
    s = dif.make_schedule(100)
    a0 = torch.rand(10_000, 8, 4, dtype=F64)
    loss = dif.diffusion_loss(lambda a, k: torch.zeros_like(a), a0, s, torch.Generator().manual_seed(2))
    assert loss.item() == pytest.approx(32.0, rel=0.03)


def test_unet_shape_and_conditioning():
    net = dif.NoisePredictor(4, 6, base=16).double()
    a = torch.randn(3, 8, 4, dtype=F64)
    k = torch.tensor([1, 50, 100])
    c = torch.randn(3, 6, dtype=F64)
    out = net(a, k, c)
    assert out.shape == a.shape
    assert not torch.allclose(out, net(a, k, c + 1.0))


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        dif.diffusion_loss(lambda a, k: a, torch.zeros(0, 8, 4), dif.make_schedule(10))
