import numpy as np
import pytest

from admdp.demogen import (EpisodeFormatError, PATTERNS, assign_patterns, generate_dataset, load_dataset,
                           pattern_counts, plan_episode, read_episode, write_episode)
from admdp.demogen.episode_io import decode_episode, encode_episode
from admdp.demogen.planner import SPEED, perturb
from admdp.simworld import reset
from admdp.simworld.tasks import default_task


def test_pattern_counts_hundred():
    assert pattern_counts(100, 0) == {"full_contact": 70, "release_regrasp": 15, "in_grasp_tighten": 15}


def test_pattern_counts_ten_is_largest_remainder():
    seen = set()
    for seed in range(20):
        c = pattern_counts(10, seed)
        assert c["full_contact"] == 7
        assert sorted([c["release_regrasp"], c["in_grasp_tighten"]]) == [1, 2]
        assert c == pattern_counts(10, seed)
        seen.add(c["release_regrasp"])
    assert seen == {1, 2}


def test_assign_patterns_matches_counts():
    labels = assign_patterns(40, 3)
    c = pattern_counts(40, 3)
    assert {p: labels.count(p) for p in PATTERNS} == c


def test_release_regrasp_signature():
    d = plan_episode(default_task("lift_bar"), 5, "release_regrasp", n_points=32)
    ap = d.q[:, 0, 3]
    closes = np.flatnonzero((ap[1:] < 0.5) & (ap[:-1] >= 0.5))
    opens = np.flatnonzero((ap[1:] >= 0.5) & (ap[:-1] < 0.5))
    assert len(closes) >= 2 and len(opens) >= 1
    assert closes[0] < opens[0] < closes[1]
    r = d.resultant(0)
    first = r[closes[0] + 1:opens[0] + 1].max()
    second = r[closes[1] + 1:].max()
    assert first < second


def test_in_grasp_tighten_signature():
    d = plan_episode(default_task("lift_bar"), 6, "in_grasp_tighten", n_points=32)
    r = d.resultant(0)
    touched = np.flatnonzero(r > 0.05)
    assert touched.size
    # force builds up while the gripper slides deeper, never releasing in between
    seg = r[touched[0]:touched[-1] + 1]
    assert (seg > 0.05).all()
    assert seg.max() > 3 * seg[:2].mean()


def test_perturb_touches_only_cruising_agents():
    w = reset(default_task("lift_bar"), 0)
    w.agents[1].aperture = 0.5
    acts = np.array([[SPEED, 0.0, 0.0, 0.0], [SPEED, 0.0, 0.0, 0.0]])
    out = perturb(w, acts, np.random.default_rng(0), 0.01)
    assert not np.allclose(out[0, :2], acts[0, :2])
    np.testing.assert_array_equal(out[0, 2:], acts[0, 2:])
    np.testing.assert_array_equal(out[1], acts[1])


def test_perturb_skips_slow_and_vertical_moves():
    w = reset(default_task("lift_bar"), 0)
    acts = np.array([[0.5 * SPEED, 0.0, 0.0, 0.0], [0.0, 0.0, -SPEED, 0.0]])
    np.testing.assert_array_equal(perturb(w, acts, np.random.default_rng(0), 0.01), acts)


def test_noisy_demo_labels_are_clean_expert_actions():
    t = default_task("lift_bar")
    clean = plan_episode(t, 4, "full_contact", record=False, noise=0.0)
    noisy = plan_episode(t, 4, "full_contact", record=False, noise=0.004)
    assert noisy.success and clean.success
    np.testing.assert_array_equal(noisy.actions[0], clean.actions[0])
    assert noisy.n_steps != clean.n_steps or not np.array_equal(noisy.actions, clean.actions)
    # labels never exceed the expert's speed limit, so no noise leaked into them
    assert np.linalg.norm(noisy.actions[:, :, :3], axis=-1).max() <= SPEED + 1e-12
    with pytest.raises(ValueError):
        plan_episode(t, 4, "full_contact", record=False, noise=-1.0)


def test_episode_roundtrip_lossless(small_dataset, tmp_path):
    d = read_episode(small_dataset / "ep_0000.admd")
    path = write_episode(d, tmp_path / "copy.admd")
    assert path.read_bytes() == (small_dataset / "ep_0000.admd").read_bytes()
    e = decode_episode(encode_episode(d))
    for f in ("images", "clouds", "tactile", "q", "tcps", "actions"):
        np.testing.assert_array_equal(getattr(d, f), getattr(e, f))


def test_truncated_episode_rejected(small_dataset):
    buf = (small_dataset / "ep_0000.admd").read_bytes()
    for cut in (3, 20, len(buf) // 2, len(buf) - 1):
        with pytest.raises(EpisodeFormatError):
            decode_episode(buf[:cut])


def test_dataset_is_byte_identical_on_rerun(small_dataset, tmp_path):
    generate_dataset(default_task("lift_bar"), 5, seed=3, root=tmp_path, n_points=64)
    for f in sorted(small_dataset.iterdir()):
        assert (tmp_path / "lift_bar" / f.name).read_bytes() == f.read_bytes(), f.name


def test_every_stored_episode_succeeds(small_demos):
    manifest, demos = small_demos
    assert manifest.episodes == len(demos) == 5
    assert all(d.success for d in demos)
    assert [d.pattern for d in demos] == manifest.patterns


def test_manifest_records_demo_noise(tmp_path):
    m = generate_dataset(default_task("lift_bar"), 2, seed=3, root=tmp_path, n_points=32, noise=0.003)
    loaded, demos = load_dataset(tmp_path / "lift_bar")
    assert m.demo_noise == loaded.demo_noise == 0.003
    assert all(d.success for d in demos)
