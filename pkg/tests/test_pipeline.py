from dataclasses import replace

import numpy as np
import pytest
import torch

from admdp.config import RunConfig
from admdp.pipeline import (AgentCountError, CheckpointError, ExpertReplay, decode_checkpoint,
                            encode_checkpoint, evaluate, load_checkpoint, policy_from_checkpoint, rollout,
                            save_checkpoint, train_agent, untrained_checkpoint)
from admdp.simworld.tasks import default_task


@pytest.fixture(scope="module")
def cfg():
    return replace(RunConfig.load(env={}), n_steps=2, batch_size=4, n_points=64)


@pytest.fixture(scope="module")
def ckpts(small_demos, cfg):
    return [train_agent(small_demos, i, cfg) for i in range(2)]


def test_checkpoint_roundtrip_is_byte_exact(ckpts, tmp_path):
    path = save_checkpoint(ckpts[0], tmp_path / "a.admc")
    again = save_checkpoint(load_checkpoint(path), tmp_path / "b.admc")
    assert path.read_bytes() == again.read_bytes()


def test_reloaded_policy_predicts_identically(ckpts, cfg):
    from admdp.estimator import AdmDpPolicy  # noqa: F401
    from admdp.simworld import sensors
    from admdp.simworld.world import reset
    ck = decode_checkpoint(encode_checkpoint(ckpts[0]))
    a, b = policy_from_checkpoint(ckpts[0]), policy_from_checkpoint(ck)
    hist = [sensors.assemble_observation(reset(cfg.task(), 1), 0, n_points=64)]
    x = a.predict(hist, torch.Generator().manual_seed(3))
    y = b.predict(hist, torch.Generator().manual_seed(3))
    assert x.tobytes() == y.tobytes()


def test_truncated_checkpoint_rejected(ckpts):
    buf = encode_checkpoint(ckpts[0])
    for cut in (2, 10, 60, len(buf) - 3):
        with pytest.raises(CheckpointError):
            decode_checkpoint(buf[:cut])
    with pytest.raises(CheckpointError, match="trailing"):
        decode_checkpoint(buf + b"\0")


def test_checkpoint_hash_mismatch(ckpts):
    with pytest.raises(CheckpointError, match="hash"):
        decode_checkpoint(encode_checkpoint(ckpts[0]), expect_hash="0" * 64)


def test_independent_agents_have_distinct_parameters(ckpts):
    assert ckpts[0].agent_index == 0 and ckpts[1].agent_index == 1
    a = ckpts[0].blocks["norm/action_min"]
    b = ckpts[1].blocks["norm/action_min"]
    assert a.shape == b.shape


def test_expert_replay_succeeds_through_harness():
    task = default_task("lift_bar")
    res = rollout([ExpertReplay(task, 3, i) for i in range(2)], task, 3)
    assert res.success and res.n_collisions == 0


def test_rollout_rejects_wrong_agent_count():
    task = default_task("lift_bar")
    with pytest.raises(AgentCountError):
        rollout([ExpertReplay(task, 0, 0)], task, 0)


def test_eval_report_is_reproducible(small_demos, cfg, tmp_path):
    ck = [untrained_checkpoint(small_demos, i, cfg) for i in range(2)]
    pol = [policy_from_checkpoint(c) for c in ck]
    r1 = evaluate(pol, cfg.task(), 2, 5, step_cap=15, n_points=64)
    r2 = evaluate(pol, cfg.task(), 2, 5, step_cap=15, n_points=64)
    assert r1.to_kv() == r2.to_kv()
    assert r1.trace_text() == r2.trace_text()
    files = r1.write(tmp_path)
    assert all(f.exists() for f in files)
    assert "success_rate" in (tmp_path / "report.kv").read_text()
    pre, n = r1.phase_alpha()["pre"]
    assert n > 0 and pre.sum() == pytest.approx(1.0)


def test_short_training_lowers_loss(small_demos, cfg):
    ck = train_agent(small_demos, 0, replace(cfg, n_steps=50, batch_size=8, lr=2e-3))
    curve = ck.blocks["loss/curve"][:, 1]
    assert curve[-10:].mean() < curve[:10].mean()


def test_no_tact_leaves_tactile_encoder_at_init(small_demos, cfg):
    from admdp.estimator import AdmDpPolicy
    trained = train_agent(small_demos, 0, replace(cfg, ablations=("no_tact",)))
    init = untrained_checkpoint(small_demos, 0, replace(cfg, ablations=("no_tact",)))
    keys = [k for k in trained.blocks if k.startswith("param/tactile_enc.")]
    assert keys
    for k in keys:
        np.testing.assert_array_equal(trained.blocks[k], init.blocks[k])
    moved = [k for k in trained.blocks if k.startswith("param/image_enc.")
             and not np.array_equal(trained.blocks[k], init.blocks[k])]
    assert moved


def test_no_amam_weights_are_uniform(small_demos, cfg):
    ck = [untrained_checkpoint(small_demos, i, replace(cfg, ablations=("no_amam",))) for i in range(2)]
    rep = evaluate([policy_from_checkpoint(c) for c in ck], cfg.task(), 1, 0, step_cap=12, n_points=64)
    alphas = np.array([r.alpha for r in rep.results[0].alpha])
    np.testing.assert_allclose(alphas, 1 / 3, atol=1e-7)


def test_agent_output_independent_of_other_policy(ckpts, cfg):
    from admdp.simworld import sensors
    from admdp.simworld.world import reset
    hist = [sensors.assemble_observation(reset(cfg.task(), 2), 1, n_points=64)]
    alone = policy_from_checkpoint(ckpts[1]).predict(hist, torch.Generator().manual_seed(4))
    pair = [policy_from_checkpoint(c) for c in ckpts]
    del pair[0]
    assert pair[0].predict(hist, torch.Generator().manual_seed(4)).tobytes() == alone.tobytes()
