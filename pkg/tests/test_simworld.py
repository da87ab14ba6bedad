import numpy as np
import pytest

from admdp.simworld import sensors
from admdp.simworld.tasks import default_task
from admdp.simworld.world import TCP_RADIUS, collisions, reset, step, task_success
from admdp.demogen import plan_episode


@pytest.fixture
def world():
    return reset(default_task("lift_bar"), 4)


def test_reset_is_seeded():
    t = default_task("lift_bar")
    a, b, c = reset(t, 1), reset(t, 1), reset(t, 2)
    np.testing.assert_array_equal(a.objects[0].pos, b.objects[0].pos)
    assert not np.allclose(a.objects[0].pos, c.objects[0].pos)


def test_step_validates_action_shape(world):
    with pytest.raises(ValueError):
        step(world, np.zeros((3, 4)))


def test_step_does_not_mutate_input(world):
    before = world.tcps().copy()
    step(world, np.full((2, 4), 0.01))
    np.testing.assert_array_equal(world.tcps(), before)


def test_tcp_collision_depth(world):
    w = world.copy()
    w.agents[0].tcp = np.array([0.0, 0.3, 0.3])
    w.agents[1].tcp = np.array([0.05, 0.3, 0.3])
    ev = [e for e in collisions(w) if e.second[0] == "agent"]
    assert len(ev) == 1
    assert ev[0].depth == pytest.approx(2 * TCP_RADIUS - 0.05)
    assert ev[0].depth == pytest.approx(0.03)


def test_active_rows_mapping():
    assert sensors.active_rows(0.25) == 1
    frame = sensors.tactile_pattern(0.25, 1.0)
    assert (frame[:, 0] == 1.0).all() and (frame[:, 1:] == 0).all()
    assert sensors.active_rows(1.0) == 4


def test_free_gripper_reads_zero(world):
    assert (sensors.read_tactile(world, 0) == 0).all()


def test_moving_object_one_cell_changes_only_its_pixels(world):
    w = world.copy()
    for a in w.agents:
        a.tcp = np.array([0.3, 0.3, 0.3])       # keep discs out of the way
    cell = 0.7 / 64
    img0 = sensors.render_rgb(w, 0)
    w2 = w.copy()
    w2.objects[0].pos = w2.objects[0].pos + [cell, 0, 0]
    img1 = sensors.render_rgb(w2, 0)
    changed = np.any(img0 != img1, axis=-1)
    bar = np.all(img0 == w.objects[0].color, axis=-1) | np.all(img1 == w.objects[0].color, axis=-1)
    assert changed.any()
    assert not (changed & ~bar).any()


def test_observation_shapes(world):
    obs = sensors.assemble_observation(world, 1, n_points=64)
    assert obs.image.shape == (64, 64, 3)
    assert obs.cloud.shape == (64, 6)
    assert obs.tactile.shape == (2, 4, 4)
    assert obs.q.shape == (sensors.PROPRIO_DIM,)
    assert obs.ego == 1 and obs.shared_tcps.shape == (2, 3)


@pytest.mark.parametrize("task", ["lift_bar", "pass_block", "stack_blocks"])
def test_expert_reaches_success(task):
    t = default_task(task)
    demo = plan_episode(t, 11, "full_contact", record=False)
    w = reset(t, 11)
    for a in demo.actions:
        w, _ = step(w, a)
    assert task_success(w)
