"""Visuomotor student: instruction encoding, bottleneck supervision,
action heads, and the distillation update."""

import copy

import numpy as np
import pytest

from raypick import tasks
from raypick.harness import PROPRIO_DIM, STACK, make_runner
from raypick.lowlevel import PDLow
from raypick.nn import core
from raypick.nn.core import Tensor
from raypick.nn.heads import gaussian_kl
from raypick.rl.distill import (DistillConfig, mixed_rollout_source,
                                rollout_beta, student_update)
from raypick.rl.replay import EpisodeBuffer, ReplayStore
from raypick.sim import params as P
from raypick.sim.camera import N_CLASSES, render_frame
from raypick.sim.world import Binding
from raypick.student import (InstructionEncoder, StudentPolicy, hard_maps,
                             load_student, save_student, stationary_label)
from raypick.teacher import PolicySetTeacher


def _view(seed: int = 5):
    runner = make_runner(seed, PDLow(), tasks.TRAIN_NO_PERTURB)
    return runner.begin(), runner


# -- instruction encoding ------------------------------------------------


def test_identical_strings_identical_embeddings():
    enc = InstructionEncoder(np.random.default_rng(0))
    instr = tasks.Instruction(0, 2)
    t1 = instr.tokens()[None]
    t2 = tasks.Instruction(0, 2).tokens()[None]
    assert np.array_equal(enc(t1).data, enc(t2).data)


def test_distinct_instructions_differ():
    enc = InstructionEncoder(np.random.default_rng(0))
    a = enc(tasks.Instruction(0, 1).tokens()[None]).data
    b = enc(tasks.Instruction(0, 2).tokens()[None]).data
    assert np.linalg.norm(a - b) > 0.0


def test_all_padding_tokens_defined():
    enc = InstructionEncoder(np.random.default_rng(0))
    out = enc(np.zeros((1, tasks.TOKEN_LEN), dtype=np.uint8)).data
    assert np.all(np.isfinite(out))


# -- bottleneck supervision ----------------------------------------------


def test_cross_entropy_minimum_at_perfect_prediction():
    gt = np.zeros((2, P.N_RAYS), dtype=np.int64)          # all background
    logits = np.full((2, N_CLASSES, P.N_RAYS), -30.0, dtype=np.float32)
    logits[:, 0, :] = 30.0
    ce = core.softmax_cross_entropy(Tensor(logits), gt)
    assert float(ce.data) == pytest.approx(0.0, abs=1e-6)


def test_depth_l1_zero_at_truth():
    gt = np.random.default_rng(1).uniform(0, 1, (2, P.N_RAYS)).astype(np.float32)
    l1 = core.absolute(Tensor(gt.copy()) - Tensor(gt)).mean()
    assert float(l1.data) == 0.0


def test_swapped_binding_swaps_target_classes():
    # same world, same snapshot: only the binding changes, so rays keep
    # their hit object and depth while target classes 1/2 move
    from raypick.sim.world import TaskObject, WorldState
    objects = [
        TaskObject("cube", 0, P.CUBE_RADIUS, 1.0, 0.15, P.CUBE_HEIGHT, 0.35),
        TaskObject("cube", 1, P.CUBE_RADIUS, 1.0, -0.15, P.CUBE_HEIGHT, 0.45),
        TaskObject("basket", 0, P.BASKET_RADIUS, 1.3, 0.45, P.BASKET_RIM, 0.55),
        TaskObject("basket", 1, P.BASKET_RADIUS, 1.3, -0.45, P.BASKET_RIM, 0.65),
    ]
    state = WorldState(objects, np.random.default_rng(0))
    state.arm_q = np.array([1.2, -0.4])   # raise the camera for range
    snap = state.snap()
    rng = np.random.default_rng(0)
    fa = render_frame(state, Binding(0, 2), rng, noise=False, snap=snap)
    fb = render_frame(state, Binding(1, 3), rng, noise=False, snap=snap)
    assert (fa.seg == 1).any() and (fa.seg == 2).any()
    assert (fb.seg == 1).any() and (fb.seg == 2).any()
    assert np.array_equal(fa.depth, fb.depth)
    # targets of one binding are plain task objects of the other
    for target_cls in (1, 2):
        assert np.all(fb.seg[fa.seg == target_cls] == 3)
        assert np.all(fa.seg[fb.seg == target_cls] == 3)
    assert np.array_equal(fa.seg == 0, fb.seg == 0)


def test_hard_maps_one_hot_argmax_and_depth_row():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(2, N_CLASSES, 8)).astype(np.float32)
    depth = rng.uniform(0, 1, (2, 8)).astype(np.float32)
    maps = hard_maps(Tensor(logits), Tensor(depth)).data
    assert maps.shape == (2, N_CLASSES + 1, 8)
    seg_part = maps[:, :N_CLASSES]
    assert np.array_equal(seg_part.argmax(axis=1), logits.argmax(axis=1))
    assert np.allclose(seg_part.sum(axis=1), 1.0)
    assert set(np.unique(seg_part)) <= {0.0, 1.0}
    assert np.array_equal(maps[:, N_CLASSES], depth)


# -- acting ---------------------------------------------------------------


def test_greedy_act_deterministic():
    view, _ = _view(11)
    student = StudentPolicy(0)
    a1 = student.act(view)
    a2 = student.act(view)
    assert np.array_equal(a1, a2)


def test_arm_samples_bounded():
    view, _ = _view(12)
    student = StudentPolicy(0)
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = student.act(view, rng)
        assert np.all(np.abs(a[0:2]) <= P.ARM_DELTA_MAX + 1e-7)


def test_stationary_probability_one_forces_zero_base_command():
    view, _ = _view(13)
    student = StudentPolicy(0)
    student.stationary.layer.b.data[:] = 50.0   # sigmoid saturates at 1
    rng = np.random.default_rng(0)
    for a in (student.act(view), student.act(view, rng)):
        assert a[3] == 0.0 and a[4] == 0.0


def test_action_depends_only_on_maps_proprio_instruction():
    view, _ = _view(14)
    student = StudentPolicy(0)
    rays = Tensor(view.ray_stack()[None].astype(np.float32))
    prop = view.proprio_stack.reshape(-1).astype(np.float32)
    tokens = view.instruction.tokens()
    with core.no_grad():
        emb = student.instr(tokens[None])
        seg, depth = student.bottleneck(rays, emb)
        maps = hard_maps(seg, depth).data[0]
    # full deployment path equals the maps-only path: every ray influence
    # routes through the bottleneck output
    assert np.array_equal(student.act(view), student.act_from_maps(maps, prop, tokens))
    noise = np.random.default_rng(0).normal(0, 10, rays.data.shape)
    perturbed = student.act_from_maps(maps, prop, tokens)
    assert np.array_equal(perturbed, student.act_from_maps(maps, prop, tokens))
    del noise


def test_save_load_roundtrip(tmp_path):
    view, _ = _view(15)
    student = StudentPolicy(3)
    path = tmp_path / "student.ckpt"
    save_student(path, student)
    clone = load_student(path)
    assert np.array_equal(student.act(view), clone.act(view))


# -- stationary labels ----------------------------------------------------


def test_stationary_label_on_prior_masked_mode():
    teacher = PolicySetTeacher(0)
    teacher.maybe_expand(3, 0)
    obs = np.random.default_rng(0).normal(size=(4, 395)).astype(np.float32)
    with core.no_grad():
        d = teacher.dist(3, Tensor(obs))
        mu = d.mu.data
    greedy = tasks.ACT_CENTER + tasks.ACT_SCALE * np.tanh(mu)
    assert stationary_label(greedy).all()


def test_stationary_label_false_when_moving():
    a = np.array([0.0, 0.0, 0.5, 0.3, 0.1])
    assert not stationary_label(a)
    assert stationary_label(np.array([0.01, -0.02, 1.0, 0.0, 0.0]))


# -- distillation losses ---------------------------------------------------


def test_kl_gradient_zero_at_mean_match():
    rng = np.random.default_rng(0)
    mu_ref = rng.normal(size=(4, 5)).astype(np.float32)
    mu = Tensor(mu_ref.copy(), requires_grad=True)
    std = Tensor(np.full((4, 5), 0.3, dtype=np.float32), requires_grad=True)
    kl = gaussian_kl(mu_ref, 0.05, mu, std).mean()
    kl.backward()
    assert np.allclose(mu.grad, 0.0, atol=1e-8)


def test_kl_matches_closed_form_hand_case():
    mu_ref = np.zeros((1, 1), dtype=np.float32)
    mu = Tensor(np.full((1, 1), 0.1, dtype=np.float32))
    std = Tensor(np.full((1, 1), 0.05, dtype=np.float32))
    kl = gaussian_kl(mu_ref, 0.05, mu, std)
    assert float(kl.data[0]) == pytest.approx(2.0, rel=1e-5)


def test_stationary_mask_removes_locomotion_kl():
    rng = np.random.default_rng(1)
    mu_ref = rng.normal(size=(3, 5)).astype(np.float32)
    base = rng.normal(size=(3, 5)).astype(np.float32)
    shifted = base.copy()
    shifted[:, tasks.LOCO_DIMS] += 5.0
    keep = np.ones((3, 5), dtype=np.float32)
    keep[:, tasks.LOCO_DIMS] = 0.0
    std = Tensor(np.full((3, 5), 0.3, dtype=np.float32))
    k1 = gaussian_kl(mu_ref, 0.05, Tensor(base, requires_grad=True), std, keep)
    mu2 = Tensor(shifted, requires_grad=True)
    k2 = gaussian_kl(mu_ref, 0.05, mu2, std, keep)
    assert np.allclose(k1.data, k2.data)
    k2.mean().backward()
    assert np.all(mu2.grad[:, tasks.LOCO_DIMS] == 0.0)


# -- rollout source schedule -----------------------------------------------


def test_beta_schedule_endpoints_and_midpoint():
    total = 1000
    assert rollout_beta(0, total) == 0.5
    assert rollout_beta(549, total) == 0.5
    assert rollout_beta(950, total) == 1.0
    assert rollout_beta(750, total) == pytest.approx(0.75)


def test_mixed_source_limits():
    for i in range(50):
        assert mixed_rollout_source(i, 1.0) == "student"
        assert mixed_rollout_source(i, 0.0) == "teacher"


def test_mixed_source_fraction_concentrates():
    n = 10_000
    frac = np.mean([mixed_rollout_source(i, 0.5) == "student" for i in range(n)])
    assert abs(frac - 0.5) <= 0.02


def test_mixed_source_reproducible():
    draws = [mixed_rollout_source(i, 0.7) for i in range(20)]
    assert draws == [mixed_rollout_source(i, 0.7) for i in range(20)]


# -- student update ---------------------------------------------------------


def _filled_store(seed: int = 0, episodes: int = 3, steps: int = 24) -> ReplayStore:
    store = ReplayStore(capacity_ticks=10_000)
    low = PDLow()
    rng = np.random.default_rng(seed)
    for ep in range(episodes):
        runner = make_runner(400 + ep, low, tasks.TRAIN_NO_PERTURB)
        view = runner.begin()
        buf = EpisodeBuffer()
        tokens = view.instruction.tokens()
        for _ in range(steps):
            buf.add_slice(ray=view.frame.appearance,
                          proprio=view.proprio_stack[-1],
                          priv=view.priv_stack[-1],
                          stage=view.stage)
            a = tasks.ACT_CENTER + tasks.ACT_SCALE * rng.uniform(-0.5, 0.5, 5)
            res = runner.step_high(a.astype(np.float32))
            buf.add_step(action=a.astype(np.float32),
                         reward=np.float32(res.reward),
                         gt_seg=view.frame.seg,
                         gt_depth=view.frame.depth,
                         tokens=tokens)
            view = res.view
            if res.done:
                break
        buf.add_slice(ray=view.frame.appearance,
                      proprio=view.proprio_stack[-1],
                      priv=view.priv_stack[-1],
                      stage=view.stage)
        store.add_episode(buf.finalize(terminal=False))
    return store


def _expanded_teacher(seed: int = 0) -> PolicySetTeacher:
    teacher = PolicySetTeacher(seed)
    for k in range(1, 8):
        teacher.maybe_expand(k, 0)
    return teacher


def test_student_update_runs_and_reports():
    store = _filled_store()
    student = StudentPolicy(0, hidden=32)
    teacher = _expanded_teacher()
    stats = student_update(store, student, teacher, DistillConfig(),
                           np.random.default_rng(0), batch_size=16)
    for key in ("critic_loss", "actor_loss", "kl", "ce", "depth_l1", "bce",
                "seg_acc"):
        assert np.isfinite(stats[key]), key
    assert 0.0 <= stats["seg_acc"] <= 1.0


def test_zero_kl_weight_ignores_teacher():
    store = _filled_store()
    cfg = DistillConfig(kl_weight=0.0)
    s1 = StudentPolicy(0, hidden=32)
    s2 = copy.deepcopy(s1)
    student_update(store, s1, _expanded_teacher(0), cfg,
                   np.random.default_rng(9), batch_size=16)
    student_update(store, s2, _expanded_teacher(1), cfg,
                   np.random.default_rng(9), batch_size=16)
    for (n1, p1), (n2, p2) in zip(s1.named_params(), s2.named_params()):
        assert n1 == n2
        assert np.array_equal(p1.data, p2.data), n1


def test_update_reaches_every_trainable_stage():
    store = _filled_store()
    student = StudentPolicy(0, hidden=32)
    before = {n: p.data.copy() for n, p in student.named_params()}
    student_update(store, student, _expanded_teacher(), DistillConfig(),
                   np.random.default_rng(0), batch_size=16)
    changed = {n for n, p in student.named_params()
               if not np.array_equal(before[n], p.data)}
    for stage in ("instr.", "unet.", "enc.", "head.", "critic."):
        assert any(n.startswith(stage) for n in changed), stage
