import math

import numpy as np
import pytest
import torch

from admdp.fusion import (AMAM, Conditioner, ConfigurationError, InstructionTable, entropy_reg,
                          softmax_weights)

F64 = torch.float64


def test_softmax_closed_form():
    a = softmax_weights(torch.tensor([1.0, 2.0, 3.0], dtype=F64), 1.0).numpy()
    np.testing.assert_allclose(a, [0.0900, 0.2447, 0.6652], atol=5e-5)


def test_low_temperature_sharpens():
    a = softmax_weights(torch.tensor([1.0, 2.0, 3.0], dtype=F64), 0.1)
    assert a[2] > 0.9999


def test_bad_temperature():
    with pytest.raises(ConfigurationError):
        softmax_weights(torch.zeros(3), 0.0)
    with pytest.raises(ConfigurationError):
        AMAM(tau=-1.0)


def test_mask_gives_exact_zero():
    a = softmax_weights(torch.tensor([[1.0, 2.0, 3.0]], dtype=F64), 1.0, torch.tensor([True, False, True]))
    assert a[0, 1].item() == 0.0
    assert a.sum().item() == pytest.approx(1.0)


def test_simplex_over_random_inputs(rng):
    m = AMAM((8, 6, 5), fusion_dim=10, hidden=12).double()
    feats = [torch.as_tensor(rng.standard_normal((10_000, d)) * 5) for d in (8, 6, 5)]
    with torch.no_grad():
        a = m.weights(feats)
    assert (a >= 0).all() and (a <= 1).all()
    assert (a.sum(-1) - 1).abs().max().item() < 1e-12


def test_entropy_reg_values():
    lam = 0.01
    u = torch.full((1, 3), 1 / 3, dtype=F64)
    assert entropy_reg(u, lam).item() == pytest.approx(lam * math.log(3), abs=1e-15)
    for k in range(3):
        v = torch.zeros(1, 3, dtype=F64)
        v[0, k] = 1.0
        assert entropy_reg(v, lam).item() == 0.0
    assert entropy_reg(u, lam, sign=-1.0).item() == pytest.approx(-lam * math.log(3))
    with pytest.raises(ConfigurationError):
        entropy_reg(u, -1.0)


def test_one_hot_fuse_selects_projection(rng):
    m = AMAM((8, 6, 5), fusion_dim=10, hidden=12).double()
    feats = [torch.as_tensor(rng.standard_normal((4, d))) for d in (8, 6, 5)]
    for k in range(3):
        alpha = torch.zeros(4, 3, dtype=F64)
        alpha[:, k] = 1.0
        fused, _ = m(feats, fixed_alpha=alpha)
        assert (fused - m.proj[k](feats[k])).abs().max().item() < 1e-10


def test_fuse_matches_weighted_sum(rng):
    m = AMAM((4, 4, 4), fusion_dim=6, hidden=8).double()
    feats = [torch.as_tensor(rng.standard_normal((2, 4))) for _ in range(3)]
    alpha = torch.as_tensor(rng.dirichlet(np.ones(3), 2))
    expect = sum(alpha[:, k:k + 1] * (feats[k] @ m.proj[k].weight.T + m.proj[k].bias) for k in range(3))
    torch.testing.assert_close(m.fuse(feats, alpha), expect, rtol=0, atol=1e-12)


def test_instruction_table_frozen_and_distinct():
    sims = []
    for seed in range(20):
        t = InstructionTable(["lift left", "lift right"], 64, seed)
        np.testing.assert_allclose(np.linalg.norm(t.table, axis=1), 1.0)
        sims.append(t.table[0] @ t.table[1])
    assert np.mean(np.array(sims) < 0.9) > 0.95
    with pytest.raises(KeyError, match="unknown instruction id 5"):
        InstructionTable(["a"], 8).embed(5)


def test_conditioner_matches_direct_evaluation(rng):
    c = Conditioner(4, 6, 5).double()
    f, q, l = (torch.as_tensor(rng.standard_normal((2, d))) for d in (6, 5, 4))
    obs = torch.cat([f, q], -1)
    expect = (l @ c.gamma.weight.T + c.gamma.bias) * obs + (l @ c.beta.weight.T + c.beta.bias)
    torch.testing.assert_close(c(f, q, l), expect, rtol=0, atol=1e-12)


def test_gate_gradient_nonzero_with_entropy_term(rng):
    m = AMAM((4, 4, 4), fusion_dim=6, hidden=8).double()
    feats = [torch.as_tensor(rng.standard_normal((3, 4))) for _ in range(3)]
    _, alpha = m(feats)
    entropy_reg(alpha, 0.01).sum().backward()
    assert m.gate[2].weight.grad.abs().sum() > 0
