import numpy as np
import pytest
import torch
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from admdp.estimator import AdmDpPolicy, TrainingWindows
from admdp.simworld import sensors
from admdp.simworld.tasks import default_task
from admdp.simworld.world import reset
from admdp.validation import DimensionMismatchError


def _history(agent=0, n=3):
    w = reset(default_task("lift_bar"), 0)
    return [sensors.assemble_observation(w, agent, n_points=64)] * n


def test_params_roundtrip_through_clone():
    p = AdmDpPolicy(tau=0.5, no_graph=True, n_steps=7)
    q = clone(p)
    assert q.get_params() == p.get_params()


def test_predict_before_fit_raises():
    with pytest.raises(NotFittedError):
        AdmDpPolicy().predict(_history())


def test_invalid_params_rejected(small_demos):
    _, demos = small_demos
    for bad in (dict(dtype="float16"), dict(entropy_sign="sideways"), dict(tau=0.0), dict(n_execute=9),
                dict(ddim_steps=200), dict(ema_decay=1.0), dict(ema_decay=-0.1)):
        with pytest.raises(ValueError):
            AdmDpPolicy(n_steps=0, **bad).fit(demos)


def test_agent_index_out_of_range(small_demos):
    with pytest.raises(DimensionMismatchError):
        AdmDpPolicy(n_steps=0).fit(small_demos[1], agent_index=2)


def test_windows_clamp_at_episode_start(small_demos):
    _, demos = small_demos
    w = TrainingWindows(demos, 0, 3, 8)
    assert len(w) == sum(d.n_steps for d in demos)
    np.testing.assert_array_equal(w.history[0], [0, 0, 0])
    start = demos[0].n_steps
    np.testing.assert_array_equal(w.history[start], [start] * 3)
    np.testing.assert_array_equal(w.chunks[start - 1, 1:], 0.0)


def test_short_fit_lowers_loss(small_demos):
    _, demos = small_demos
    p = AdmDpPolicy(n_steps=50, batch_size=8, lr=2e-3, log_every=0).fit(demos, 0)
    curve = np.array([c[1] for c in p.loss_curve_])
    assert len(curve) == 50
    assert curve[-10:].mean() < curve[:10].mean()


def test_predict_returns_six_actions_and_simplex_weights(small_demos):
    _, demos = small_demos
    p = AdmDpPolicy(n_steps=0).fit(demos, 1)
    acts = p.predict(_history(agent=1), torch.Generator().manual_seed(0))
    assert acts.shape == (6, 4)
    chunk, alpha = p.predict_chunk(_history(agent=1, n=1), torch.Generator().manual_seed(0))
    assert chunk.shape == (8, 4)
    assert alpha.sum() == pytest.approx(1.0) and (alpha >= 0).all()
    assert (chunk >= p.action_min_ - 1e-9).all() and (chunk <= p.action_max_ + 1e-9).all()


def test_predict_rejects_other_agents_observation(small_demos):
    p = AdmDpPolicy(n_steps=0).fit(small_demos[1], 0)
    with pytest.raises(ValueError, match="agent 1"):
        p.predict(_history(agent=1))


def test_ablation_masks_weights(small_demos):
    _, demos = small_demos
    p = AdmDpPolicy(n_steps=0, no_tact=True).fit(demos, 0)
    _, alpha = p.predict_chunk(_history(), torch.Generator().manual_seed(0))
    assert alpha[1] == 0.0


def test_normalization_roundtrip():
    p = AdmDpPolicy().build(["a", "b"], 0, 2)
    p.action_min_, p.action_max_ = np.array([-0.1, -0.2, 0, -1]), np.array([0.1, 0.3, 0.05, 1])
    a = np.random.default_rng(0).uniform(p.action_min_, p.action_max_, (5, 4))
    np.testing.assert_allclose(p.denormalize_actions(p.normalize_actions(a)), a, atol=1e-12)


def test_ema_weights_average_raw_iterates(small_demos):
    _, demos = small_demos
    kw = dict(batch_size=4, log_every=0)
    p0 = AdmDpPolicy(n_steps=0, ema_decay=0.0, **kw).fit(demos, 0)
    p1 = AdmDpPolicy(n_steps=1, ema_decay=0.0, **kw).fit(demos, 0)
    e1 = AdmDpPolicy(n_steps=1, ema_decay=0.9, **kw).fit(demos, 0)
    # averaging leaves the optimisation path alone
    assert e1.loss_curve_ == p1.loss_curve_
    # first update uses the warm-up decay 1/10
    for (k, a), b, c in zip(p0.net_.named_parameters(), p1.net_.parameters(), e1.net_.parameters()):
        torch.testing.assert_close(c, 0.1 * a + 0.9 * b, rtol=1e-5, atol=1e-7, msg=k)


def test_fit_is_deterministic(small_demos):
    _, demos = small_demos
    a = AdmDpPolicy(n_steps=3, batch_size=4, log_every=0).fit(demos, 0)
    b = AdmDpPolicy(n_steps=3, batch_size=4, log_every=0).fit(demos, 0)
    assert a.loss_curve_ == b.loss_curve_
    for (k, x), (_, y) in zip(a.net_.state_dict().items(), b.net_.state_dict().items()):
        assert torch.equal(x, y), k
