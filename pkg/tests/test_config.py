import pytest

from admdp.config import CONFIG_DIR, SEED_ENV, ConfigError, RunConfig, parse_text, read_config_file


def test_parse_text_comments_and_errors():
    assert parse_text("a = 1  # note\n\n# full line\nb=x y") == {"a": "1", "b": "x y"}
    with pytest.raises(ConfigError, match="<text>:1"):
        parse_text("no equals here")


def test_toy_config_loads_with_included_task():
    cfg = RunConfig.load(CONFIG_DIR / "toy.cfg", env={})
    assert cfg.task().task == "lift_bar"
    assert cfg.preset == "toy" and cfg.n_points == 256 and cfg.schedule_kind == "cosine"


def test_full_scale_preset_points():
    assert RunConfig.load(overrides={"preset": "paper"}, env={}).n_points == 1024


def test_include_cycle(tmp_path):
    (tmp_path / "a.cfg").write_text("include = b.cfg\n")
    (tmp_path / "b.cfg").write_text("include = a.cfg\n")
    with pytest.raises(ConfigError, match="cycle"):
        read_config_file(tmp_path / "a.cfg")


def test_missing_task_file_named():
    with pytest.raises(ConfigError, match="nowhere.task"):
        RunConfig.load(overrides={"task_file": "nowhere.task"}, env={})


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config key"):
        RunConfig.load(overrides={"colour": "red"}, env={})


def test_out_of_range_numbers_rejected():
    for bad in ({"ema_decay": "1.0"}, {"demo_noise": "-0.01"}):
        with pytest.raises(ConfigError):
            RunConfig.load(overrides=bad, env={})


def test_seed_env_override():
    assert RunConfig.load(env={SEED_ENV: "42"}).seed == 42


def test_hash_tracks_training_keys_only():
    base = RunConfig.load(env={})
    assert RunConfig.load(overrides={"ablations": "no_graph"}, env={}).hash != base.hash
    assert RunConfig.load(overrides={"jobs": 4, "eval_episodes": 3}, env={}).hash == base.hash
    assert RunConfig.load(overrides={"task_file": "pass_block"}, env={}).hash != base.hash


def test_canonical_roundtrip():
    cfg = RunConfig.load(overrides={"task_file": "pass_block", "ablations": "no_tact", "tau": 0.5}, env={})
    back = RunConfig.from_canonical(cfg.canonical_text())
    assert back.hash == cfg.hash
    assert back.task().task == "pass_block"


def test_range_override(tmp_path):
    (tmp_path / "t.task").write_text("task = lift_bar\nrange.bar.x = -0.01 0.01\n")
    spec = RunConfig.load(overrides={"task_file": str(tmp_path / "t.task")}, env={}).task()
    assert spec.objects[0].x_range == (-0.01, 0.01)
