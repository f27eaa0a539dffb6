import math
from dataclasses import fields, replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from koopdiff.benchsim import (
    CANONICAL_Q,
    TASKS,
    DemoDataset,
    GenerationError,
    env_reset,
    env_step,
    fk,
    generate_demos,
    ik,
    phase_target,
    render,
    run_expert_episode,
    scripted_expert,
    task_defaults,
)
from koopdiff.benchsim.env import GRIP_MAX, JOINT_LIMIT, JOINT_RATE, EpisodeTrace
from koopdiff.numgraph import ChecksumError, ContractError


def run_expert(cfg, seed, noise=True):
    s, _ = env_reset(cfg, seed)
    rng = np.random.default_rng(seed + 99) if noise else None
    states = [s]
    done = False
    while not done:
        s, _, done, _ = env_step(s, scripted_expert(s, cfg, rng), cfg)
        states.append(s)
    return states


def same_state(a, b):
    for f in fields(a):
        x, y = getattr(a, f.name), getattr(b, f.name)
        if isinstance(x, np.ndarray):
            if not np.array_equal(x, y):
                return False
        elif x != y:
            return False
    return True


# --- kinematics ---------------------------------------------------------------


@given(x=st.floats(-0.6, 0.6), y=st.floats(0.2, 0.8))
def test_ik_inverts_fk(x, y):
    q = ik((x, y))
    if q is None:
        assert math.hypot(x, y) > 0.9 - 1e-9 or math.hypot(x, y) < 0.1 + 1e-9
    else:
        np.testing.assert_allclose(fk(q), [x, y], atol=1e-9)
        assert q[1] <= 0


def test_ik_unreachable():
    assert ik((2.0, 0.0)) is None


# --- reset --------------------------------------------------------------------


@pytest.mark.parametrize("task", TASKS)
def test_reset_deterministic(task):
    cfg = task_defaults(task, init_mode="perturbed")
    s1, o1 = env_reset(cfg, 17)
    s2, o2 = env_reset(cfg, 17)
    assert same_state(s1, s2)
    assert o1.front_image.tobytes() == o2.front_image.tobytes()
    assert o1.wrist_image.tobytes() == o2.wrist_image.tobytes()


def test_fixed_mode_canonical_pose():
    for seed in range(20):
        s, _ = env_reset(task_defaults("latch_pull"), seed)
        assert tuple(s.q) == CANONICAL_Q


def test_perturbed_mode_bound():
    cfg = task_defaults("latch_pull", init_mode="perturbed")
    dev = np.array([np.abs(env_reset(cfg, seed)[0].q - CANONICAL_Q) for seed in range(1000)])
    bound = math.radians(10)
    assert dev.max() <= bound
    assert dev.max(axis=0).min() > 0.98 * bound


def test_same_seed_same_object_across_conditions():
    a, _ = env_reset(task_defaults("latch_pull"), 5)
    b, _ = env_reset(task_defaults("latch_pull", init_mode="perturbed"), 5)
    np.testing.assert_array_equal(a.obj, b.obj)


def test_config_validation():
    with pytest.raises(ContractError):
        task_defaults("latch_pull", step_limit=0)
    with pytest.raises(ContractError):
        task_defaults("sweep")
    with pytest.raises(ContractError):
        task_defaults("latch_pull", x_range=(0.5, 0.9))


# --- stepping -----------------------------------------------------------------


@pytest.mark.parametrize("task", TASKS)
def test_zero_displacement_action(task):
    cfg = task_defaults(task)
    s, _ = env_reset(cfg, 3)
    n, _, _, _ = env_step(s, [s.q[0], s.q[1], s.width], cfg)
    assert n.step == s.step + 1
    assert same_state(replace(n, step=s.step), s)


def test_joint_rate_limit():
    cfg = task_defaults("latch_pull")
    s, _ = env_reset(cfg, 0)
    n, *_ = env_step(s, [s.q[0] + 1.0, s.q[1] - 0.5, GRIP_MAX], cfg)
    d = n.q - s.q
    assert np.max(np.abs(d)) == pytest.approx(JOINT_RATE)
    assert d[0] / d[1] == pytest.approx(-2.0)  # straight line in joint space


@settings(max_examples=30)
@given(seed=st.integers(0, 1000), task=st.sampled_from(TASKS))
def test_physics_bounds_under_random_actions(seed, task):
    cfg = task_defaults(task, step_limit=60)
    rng = np.random.default_rng(seed)
    s, _ = env_reset(cfg, seed)
    done = False
    while not done:
        a = np.concatenate([rng.uniform(-7, 7, size=2), rng.uniform(-0.2, 0.3, size=1)])
        s, obs, done, _ = env_step(s, a, cfg)
        assert np.all(np.abs(s.q) <= JOINT_LIMIT)
        assert 0.0 <= s.width <= GRIP_MAX
        assert 0.0 <= s.progress <= 1.0
        assert obs.front_image.min() >= 0 and obs.front_image.max() <= 1


def test_rejects_bad_action():
    cfg = task_defaults("latch_pull")
    s, _ = env_reset(cfg, 0)
    with pytest.raises(ContractError):
        env_step(s, [np.nan, 0.0, 0.0], cfg)


def test_bit_deterministic_trace():
    cfg = task_defaults("place_block", init_mode="perturbed")
    acts = np.random.default_rng(0).uniform(-1, 1, size=(40, 3)) + [2.4, -1.0, 0.0]
    runs = []
    for _ in range(2):
        s, _ = env_reset(cfg, 11)
        out = []
        for a in acts:
            s, o, _, _ = env_step(s, a, cfg)
            out.append(np.concatenate([s.q, [s.width], s.obj, o.front_image.ravel(), o.wrist_image.ravel()]))
        runs.append(np.stack(out).tobytes())
    assert runs[0] == runs[1]


def test_latch_never_progresses_with_open_gripper():
    cfg = task_defaults("latch_pull")
    for seed in range(20):
        s, _ = env_reset(cfg, seed)
        rng = np.random.default_rng(seed)
        done = False
        while not done:
            a = scripted_expert(s, cfg, rng)
            a[2] = GRIP_MAX
            s, _, done, _ = env_step(s, a, cfg)
            assert s.progress == 0.0 and not s.grasped
        assert not s.success


def test_forced_failure_leaves_progress_at_zero():
    cfg = task_defaults("latch_pull", force_grasp_failures=1)
    s, _ = env_reset(cfg, 4)
    while s.failed_grasps == 0:
        s, *_ = env_step(s, scripted_expert(s, cfg), cfg)
    assert s.progress == 0.0 and not s.grasped and s.width < 0.02


def test_latch_needs_release_to_count():
    cfg = task_defaults("latch_pull")
    s, _ = env_reset(cfg, 5)
    while not s.grasped:
        s, *_ = env_step(s, scripted_expert(s, cfg), cfg)
    while s.progress < 1.0:
        a = scripted_expert(s, cfg)
        a[2] = 0.0
        s, *_ = env_step(s, a, cfg)
    hold = np.array([*s.q, 0.0])
    for _ in range(5):
        s, *_ = env_step(s, hold, cfg)
    assert s.grasped and not s.success
    s, _, done, ok = env_step(s, np.array([*s.q, GRIP_MAX]), cfg)
    while not done:
        s, _, done, ok = env_step(s, np.array([*s.q, GRIP_MAX]), cfg)
    assert ok and not s.grasped and s.progress >= cfg.success_progress


def test_success_flag_monotone():
    cfg = task_defaults("latch_pull")
    states = run_expert(cfg, 8)
    flags = [s.success for s in states]
    first = flags.index(True)
    assert all(flags[first:])


# --- rendering ----------------------------------------------------------------


@pytest.mark.parametrize("task", TASKS)
def test_render_range_and_determinism(task):
    cfg = task_defaults(task)
    s, _ = env_reset(cfg, 2)
    f1, w1 = render(s, cfg)
    f2, w2 = render(s, cfg)
    assert f1.shape == w1.shape == (32, 32)
    for img in (f1, w1):
        assert img.min() >= 0.0 and img.max() <= 1.0
    assert f1.tobytes() == f2.tobytes() and w1.tobytes() == w2.tobytes()


def test_object_outside_wrist_window():
    cfg = task_defaults("place_block")
    s, _ = env_reset(cfg, 0)
    tip = fk(s.q)
    near = replace(s, obj=tip + np.array([0.05, 0.0]))
    far_a = replace(s, obj=tip + np.array([0.0, -0.4]))
    far_b = replace(s, obj=tip + np.array([0.3, -0.4]))
    fa, wa = render(far_a, cfg)
    fb, wb = render(far_b, cfg)
    _, wn = render(near, cfg)
    np.testing.assert_array_equal(wa, wb)  # object invisible to the wrist camera
    assert np.abs(fa - fb).max() > 0.5  # but visible in the front camera
    assert np.abs(wn - wa).max() > 0.5


def test_button_press_barely_visible():
    cfg = task_defaults("press_button")
    s, _ = env_reset(cfg, 0)
    pressed = replace(s, obj=s.obj_home - np.array([0.0, 0.004]), pressed=True)
    f0, _ = render(s, cfg)
    f1, _ = render(pressed, cfg)
    assert 0 < np.abs(f1 - f0).mean() < 0.01


# --- expert -------------------------------------------------------------------


@pytest.mark.parametrize("task", TASKS)
def test_expert_success_rate(task):
    cfg = task_defaults(task)
    wins = sum(run_expert(cfg, seed)[-1].success for seed in range(200))
    assert wins >= 190


@pytest.mark.parametrize("task", TASKS)
def test_expert_success_rate_perturbed(task):
    cfg = task_defaults(task, init_mode="perturbed")
    wins = sum(run_expert(cfg, seed)[-1].success for seed in range(50))
    assert wins >= 48


def test_expert_holds_at_success():
    cfg = task_defaults("latch_pull")
    s = run_expert(cfg, 1)[-1]
    assert s.success
    a = scripted_expert(s, cfg, np.random.default_rng(0))
    np.testing.assert_array_equal(a[:2], s.q)
    assert a[2] == s.grip_cmd


def test_expert_deterministic_per_seed():
    cfg = task_defaults("press_button")
    a = run_expert_episode(cfg, 21)
    b = run_expert_episode(cfg, 21)
    assert a.actions.tobytes() == b.actions.tobytes()
    assert a.front.tobytes() == b.front.tobytes()


@pytest.mark.parametrize("task", TASKS)
def test_approach_distance_non_increasing(task):
    cfg = task_defaults(task)
    for seed in range(20):
        states = run_expert(cfg, seed)
        d = []
        for s in states:
            phase, goal, _ = phase_target(s, cfg)
            if phase != "approach":
                break
            d.append(float(np.linalg.norm(fk(s.q) - goal)))
        assert len(d) > 10
        for i in range(len(d) - 10):
            assert d[i + 10] <= d[i] + 1e-12


def test_recovery_from_failed_grasp():
    cfg = task_defaults("latch_pull", force_grasp_failures=1)
    for seed in range(30):
        s, _ = env_reset(cfg, seed)
        rng = np.random.default_rng(seed)
        while s.failed_grasps == 0:
            s, *_ = env_step(s, scripted_expert(s, cfg, rng), cfg)
        # restart a fresh controller from the failure state
        rng = np.random.default_rng(seed + 1)
        done = False
        while not done:
            s, _, done, _ = env_step(s, scripted_expert(s, cfg, rng), cfg)
        assert s.success, seed


# --- datasets -----------------------------------------------------------------


@pytest.fixture(scope="module")
def small_demos():
    return generate_demos(task_defaults("latch_pull"), 4, seed=5)


def test_generated_episodes_succeed(small_demos):
    assert len(small_demos) == 4
    assert all(ep.success for ep in small_demos.episodes)
    assert len({ep.seed for ep in small_demos.episodes}) == 4


def test_save_load_roundtrip(small_demos, tmp_path):
    small_demos.save(tmp_path)
    back = DemoDataset.load(tmp_path)
    assert back.cfg == small_demos.cfg
    for a, b in zip(small_demos.episodes, back.episodes):
        for k in ("front", "wrist", "q", "actions"):
            assert getattr(a, k).tobytes() == getattr(b, k).tobytes()
        assert (a.seed, a.task, a.success) == (b.seed, b.task, b.success)


def test_corruption_detected(small_demos, tmp_path):
    small_demos.save(tmp_path)
    f = tmp_path / "episode_00001.bin"
    raw = bytearray(f.read_bytes())
    raw[-3] ^= 0xFF
    f.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        DemoDataset.load(tmp_path)


def test_file_is_little_endian_doubles(small_demos, tmp_path):
    import json
    import struct

    small_demos.save(tmp_path)
    raw = (tmp_path / "episode_00000.bin").read_bytes()
    (n,) = struct.unpack("<I", raw[:4])
    header = json.loads(raw[4:4 + n])
    assert header["task"] == "latch_pull" and header["length"] == len(small_demos.episodes[0])
    tail = header["blocks"][-1]
    size = int(np.prod(tail["shape"]))
    np.testing.assert_array_equal(np.frombuffer(raw[-8 * size:], dtype="<f8").reshape(tail["shape"]),
                                  small_demos.episodes[0].actions)


def test_tuple_sweep_stays_in_bounds(small_demos):
    h, l = 4, 16
    index = small_demos.tuple_index()
    assert len(index) == sum(len(ep) for ep in small_demos.episodes)
    ft, wt, fn, wn, q, chunk = small_demos.gather(index, h, l)
    assert chunk.shape == (len(index), l, 3)
    for row, (e, t) in enumerate(index):
        ep = small_demos.episodes[e]
        last = len(ep) - 1
        assert 0 <= t <= last
        np.testing.assert_array_equal(fn[row], ep.front[min(t + h, last)])
        for i in range(l):
            np.testing.assert_array_equal(chunk[row, i], ep.actions[min(t + i, last)])


def test_generation_aborts_after_too_many_failures():
    with pytest.raises(GenerationError):
        generate_demos(task_defaults("latch_pull", step_limit=2), 2, seed=0)


def test_trace_csv(tmp_path):
    cfg = task_defaults("latch_pull")
    s, _ = env_reset(cfg, 0)
    tr = EpisodeTrace("latch_pull", 0, "fixed")
    for _ in range(5):
        a = scripted_expert(s, cfg)
        s, *_ = env_step(s, a, cfg)
        tr.record(a, s, {"branch": "fused"})
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert len(lines) == 6 and lines[0].startswith("step,a_q1")
