"""Task chain, rewards, priors, scene generation.

Reward oracles are closed-form hand calculations, frozen here:
  approach shaping   = 1.0 * (d_prev - d_now)
  retract shaping    = 0.5 * (|q_prev - q_n| - |q_now - q_n|)
  centring shaping   = 0.5 * (cos_prev - cos_now), where for a cube on the
                       camera axis at horizontal offset a from the gripper,
                       fingers at +-s: cos = (a^2 - s^2) / (a^2 + s^2)
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raypick import tasks
from raypick.sim import params as P
from raypick.sim.world import Binding, TaskObject, object_visible, step_world
from test_sim import (Q_GROUND, Q_H025, bare_state, basket, close_gripper,
                      cube, neutral_draws)


def two_object_state(cube_xy=(2.0, 0.0), basket_xy=(-2.0, 0.0), arm_q=Q_H025):
    state = bare_state([cube(*cube_xy), basket(*basket_xy)])
    state.arm_q = np.asarray(arm_q, dtype=np.float64).copy()
    return state, Binding(0, 1)


def hold_cube(state, binding):
    """Teleport-grasp: put the cube at the gripper and close over it."""
    state.arm_q = Q_GROUND.copy()
    gx, gy, _ = state.gripper_pose()
    o = state.objects[binding.target_cube]
    o.x, o.y = gx, gy
    close_gripper(state)
    assert state.held == binding.target_cube


class TestSubtaskChain:
    def test_fresh_scene_behind_target_is_search(self):
        state, b = two_object_state(cube_xy=(-2.0, 0.0), basket_xy=(2.0, 0.0))
        assert tasks.compute_subtask(state, b) == (1, False)

    def test_visible_far_cube_is_move_to(self):
        state, b = two_object_state()
        assert object_visible(state, 0)
        assert tasks.compute_subtask(state, b) == (2, False)

    def test_within_reach_is_grasp(self):
        state, b = two_object_state(cube_xy=(0.35, 0.0))
        assert tasks.compute_subtask(state, b) == (3, False)

    def test_one_lifted_tick_keeps_grasp_stage(self):
        state, b = two_object_state()
        hold_cube(state, b)
        assert tasks.compute_subtask(state, b, lift_counter=1) == (3, False)

    def test_two_lifted_ticks_advance_to_basket_search(self):
        state, b = two_object_state(basket_xy=(-2.0, 0.0))
        hold_cube(state, b)
        assert tasks.compute_subtask(state, b, lift_counter=2) == (4, False)

    def test_grasp_latch_survives_counter_reset(self):
        state, b = two_object_state(basket_xy=(-2.0, 0.0))
        hold_cube(state, b)
        assert tasks.compute_subtask(state, b, 0, grasp_latched=True) == (4, False)

    def test_visible_far_basket_is_move_with_object(self):
        state, b = two_object_state(basket_xy=(2.0, 0.0))
        hold_cube(state, b)
        state.arm_q = Q_H025.copy()   # raise vantage; cube rides along
        step_world(state, 0.0, 0.0, np.zeros(2), 1.0, P.DT_LOW)
        assert tasks.compute_subtask(state, b, lift_counter=2) == (5, False)

    def test_basket_in_reach_wants_gripper_over(self):
        # short-reach raised pose (reach 0.15, height 0.25): basket dead
        # ahead at 0.32 m is inside base reach, visible, but 0.17 m from
        # the gripper, so the place stage is still unmet
        state, b = two_object_state(basket_xy=(0.32, 0.0))
        hold_cube(state, b)
        state.arm_q = np.array([0.9273, -2.4981])
        step_world(state, 0.0, 0.0, np.zeros(2), 1.0, P.DT_LOW)
        assert tasks.compute_subtask(state, b, lift_counter=2) == (6, False)

    def test_gripper_over_basket_wants_drop(self):
        state, b = two_object_state()
        hold_cube(state, b)
        state.arm_q = Q_H025.copy()
        step_world(state, 0.0, 0.0, np.zeros(2), 1.0, P.DT_LOW)
        gx, gy, gh = state.gripper_pose()
        assert gh >= P.BASKET_RIM + P.PLACE_HEIGHT_MARGIN
        state.objects[1].x, state.objects[1].y = gx, gy
        assert tasks.compute_subtask(state, b, lift_counter=2) == (7, False)

    def test_cube_in_target_basket_is_success(self):
        state, b = two_object_state()
        state.objects[0].in_basket = 1
        assert tasks.compute_subtask(state, b) == (7, True)

    def test_cube_in_wrong_basket_is_not_success(self):
        state = bare_state([cube(2.0, 0.0), basket(-2.0, 0.0), basket(2.0, 1.0, color=2)])
        state.arm_q = Q_H025.copy()
        b = Binding(0, 1)
        state.objects[0].in_basket = 2
        k, success = tasks.compute_subtask(state, b)
        assert not success


class TestRewards:
    def test_approach_shaping_exact(self):
        state, b = two_object_state(cube_xy=(1.0, 0.0))
        tr = tasks.TaskTracker(state, b)
        assert tr.stage == 2
        assert tr.achieved[0] and not tr.achieved[1]   # search pre-latched, unpaid
        prev = state.snap()
        state.x = 0.1
        r = tr.step_reward(prev, state, 2)
        assert r == pytest.approx(0.1, abs=1e-5)

    def test_stage_bonus_paid_once_on_entry(self):
        state, b = two_object_state(cube_xy=(1.0, 0.0))
        tr = tasks.TaskTracker(state, b)
        prev = state.snap()
        state.x = 0.7   # 0.30 to the cube: inside reach, stage 3 entered
        r = tr.step_reward(prev, state, 2)
        assert r == pytest.approx(1.0 * (1.0 - 0.3) + tasks.STAGE_BONUS, abs=1e-5)
        # stepping back out and in again does not pay again
        prev = state.snap()
        state.x = 0.0
        tr.step_reward(prev, state, tr.stage)
        prev = state.snap()
        state.x = 0.7
        r = tr.step_reward(prev, state, tr.stage)
        assert r == pytest.approx(1.0 * 0.7, abs=1e-5)

    def test_retract_shaping_exact(self):
        state, b = two_object_state(basket_xy=(-2.0, 0.0))
        hold_cube(state, b)
        tr = tasks.TaskTracker(state, b)
        tr.achieved[:3] = True
        tr.ever[:3] = True
        state.arm_q = P.Q_NEUTRAL + np.array([0.3, 0.2])
        prev = state.snap()
        state.arm_q = P.Q_NEUTRAL.copy()
        r = tr.step_reward(prev, state, 4)
        assert r == pytest.approx(0.5 * math.hypot(0.3, 0.2), abs=1e-5)

    def test_centring_shaping_matches_closed_form(self):
        state, b = two_object_state(cube_xy=(0.35, 0.0))
        state.arm_q = Q_GROUND.copy()
        tr = tasks.TaskTracker(state, b)
        assert tr.stage == 3
        gx, gy, gh = state.gripper_pose()
        a = 0.08
        o = state.objects[0]
        o.x, o.y = gx + a, gy
        prev = state.snap()
        o.x, o.y = gx, gy
        r = tr.step_reward(prev, state, 3)
        s = P.FINGER_HALFSPAN    # alignment always reads the open span
        cos_prev = (a * a - s * s) / (a * a + s * s)
        ch = P.CUBE_HEIGHT
        d_prev = math.sqrt(a * a + (gh - ch) ** 2)
        d_now = abs(gh - ch)
        expect = 1.0 * (d_prev - d_now) + 0.5 * (cos_prev - (-1.0))
        assert r == pytest.approx(expect, abs=1e-4)

    def test_closing_on_a_centred_cube_costs_nothing(self):
        # the one move stage 3 exists to teach must not be fined by the
        # centring term: the cosine reads the open finger span throughout
        state, b = two_object_state(cube_xy=(0.35, 0.0))
        state.arm_q = Q_GROUND.copy()
        tr = tasks.TaskTracker(state, b)
        assert tr.stage == 3
        gx, gy, _ = state.gripper_pose()
        o = state.objects[0]
        o.x, o.y = gx, gy
        prev = state.snap()
        state.grip = 0.95            # mid-closure, cube still centred
        r = tr.step_reward(prev, state, 3)
        assert r >= -1e-9

    def test_success_pays_remaining_stages_plus_bonus(self):
        state, b = two_object_state()
        hold_cube(state, b)
        tr = tasks.TaskTracker(state, b)
        assert tr.stage == 3
        gx, gy, _ = state.gripper_pose()
        state.objects[1].x, state.objects[1].y = gx, gy
        total = 0.0
        for _ in range(30):
            prev = state.snap()
            step_world(state, 0.0, 0.0, np.zeros(2), 0.0, P.DT_LOW)
            total += tr.step_reward(prev, state, 4)
            if tr.done:
                break
        assert tr.success
        # stages 3..7 newly achieved (+5) plus the terminal bonus (+1)
        assert total == pytest.approx(5.0 + tasks.SUCCESS_BONUS, abs=1e-5)
        assert tr.ever.all()

    def test_drop_regresses_latches(self):
        state, b = two_object_state(basket_xy=(-2.0, 0.0))
        hold_cube(state, b)
        tr = tasks.TaskTracker(state, b)
        tr.achieved[:4] = True
        tr.ever[:4] = True
        tr.lift_counter = 2
        prev = state.snap()
        for _ in range(30):
            step_world(state, 0.0, 0.0, np.zeros(2), 0.0, P.DT_LOW)
            if state.held < 0:
                break
        r = tr.step_reward(prev, state, 4)
        assert state.held == -1
        assert not tr.achieved[2:].any()
        assert tr.achieved[:2].all()
        assert tr.ever[:4].all()          # metric latches never regress
        assert tr.lift_counter == 0
        assert tr.stage <= 3

    def test_drop_while_carrying_pays_keep_grasp_penalty(self):
        state, b = two_object_state(basket_xy=(2.0, 0.0))
        hold_cube(state, b)
        tr = tasks.TaskTracker(state, b)
        tr.achieved[:4] = True
        state.arm_q = Q_H025.copy()
        step_world(state, 0.0, 0.0, np.zeros(2), 1.0, P.DT_LOW)
        prev = state.snap()
        # force-release far from any basket
        state.grip = 0.4
        state.held = -1
        state.objects[0].height = P.CUBE_HEIGHT
        r = tr.step_reward(prev, state, 5)
        assert r <= tasks.KEEP_GRASP_PENALTY + 1e-6

    def test_arena_exit_is_terminal_failure(self):
        state, b = two_object_state()
        tr = tasks.TaskTracker(state, b)
        state.x = P.ARENA_HALF - 0.01
        state.v = 2.0
        total = 0.0
        for _ in range(200):
            prev = state.snap()
            step_world(state, P.F_MAX, 0.0, np.zeros(2), 0.5, P.DT_LOW)
            total += tr.step_reward(prev, state, tr.stage)
            if tr.done:
                break
        assert tr.failure and not tr.success

    def test_lift_counter_counts_high_ticks(self):
        state, b = two_object_state(basket_xy=(-2.0, 0.0))
        hold_cube(state, b)
        tr = tasks.TaskTracker(state, b)
        state.arm_q = Q_H025.copy()
        step_world(state, 0.0, 0.0, np.zeros(2), 1.0, P.DT_LOW)
        assert state.gripper_pose()[2] >= P.LIFT_HEIGHT
        tr.on_high_tick(state)
        assert tr.lift_counter == 1
        assert tasks.compute_subtask(state, b, tr.lift_counter, tr.achieved[2])[0] == 3
        tr.on_high_tick(state)
        assert tr.lift_counter == 2
        assert tasks.compute_subtask(state, b, tr.lift_counter, tr.achieved[2])[0] == 4


class TestPriors:
    def test_masks_by_stage(self):
        for k, expect in [(1, [0, 0, 0, 1, 0]), (2, [0, 0, 0, 0, 0]),
                          (3, [0, 0, 0, 1, 1]), (4, [0, 0, 0, 1, 0]),
                          (5, [0, 0, 0, 0, 0]), (6, [0, 0, 0, 1, 1]),
                          (7, [0, 0, 0, 1, 1])]:
            assert tasks.prior_mask(k).astype(int).tolist() == expect

    def test_stationary_stage_flags(self):
        assert [tasks.stationary_stage(k) for k in range(1, 8)] == \
            [False, False, True, False, False, True, True]


class TestInstructions:
    def test_text_round_trip_through_tokens(self):
        ins = tasks.Instruction(2, 0)
        toks = ins.tokens()
        assert toks.shape == (tasks.TOKEN_LEN,) and toks.dtype == np.uint8
        text = bytes(toks[toks > 0]).decode("ascii")
        assert text == "drop the blue cube into the red basket"
        assert np.all(toks[len(text):] == 0)

    def test_distinct_instructions_encode_differently(self):
        a = tasks.Instruction(0, 1).tokens()
        b = tasks.Instruction(1, 0).tokens()
        assert not np.array_equal(a, b)


class TestScenes:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000))
    def test_training_scene_invariants(self, seed):
        rng = np.random.default_rng(seed)
        state, instr, b = tasks.generate_scene(rng)
        cubes = [o for o in state.objects if o.kind == "cube"]
        baskets = [o for o in state.objects if o.kind == "basket"]
        extras = [o for o in state.objects if o.kind == "distractor"]
        assert len(cubes) == 2 and len(baskets) == 2
        assert len({o.color_id for o in cubes}) == 2
        assert len({o.color_id for o in baskets}) == 2
        assert state.objects[b.target_cube].kind == "cube"
        assert state.objects[b.target_basket].kind == "basket"
        assert state.objects[b.target_cube].color_id == instr.cube_color
        assert state.objects[b.target_basket].color_id == instr.basket_color
        assert len(extras) <= P.DISTRACTOR_MAX
        for o in state.objects:
            assert abs(o.x) <= P.ARENA_HALF and abs(o.y) <= P.ARENA_HALF
            assert 0.0 <= o.appearance <= 1.0
        for d in extras:
            assert math.hypot(d.x, d.y) >= P.DISTRACTOR_SPAWN_CLEAR + d.radius - 1e-9
            for t in cubes + baskets:
                assert math.hypot(d.x - t.x, d.y - t.y) >= P.DISTRACTOR_CLEARANCE + d.radius - 1e-9

    def test_appearance_bands_separate_colors(self):
        # noiseless band centres must be distinguishable after worst-case
        # per-episode offset: band half-width + offset < half the spacing
        spacing = np.diff(np.sort(np.asarray(P.BAND_CENTERS))).min()
        assert P.BAND_HALF + P.BAND_OFFSET_MAG < spacing / 2

    def test_scripted_row_layout_exact(self):
        row = {"corners": {"TL": "B", "TR": "R", "BL": "g", "BR": "r"},
               "instruction": {"cube": "g", "basket": "R"}}
        state, instr, b = tasks.scene_from_script_row(row, np.random.default_rng(0))
        kinds = {(round(o.x), round(o.y)): (o.kind, o.color_id) for o in state.objects}
        assert kinds[(-1, 1)] == ("basket", 2)
        assert kinds[(1, 1)] == ("basket", 0)
        assert kinds[(-1, -1)] == ("cube", 1)
        assert kinds[(1, -1)] == ("cube", 0)
        assert instr.cube_color == 1 and instr.basket_color == 0
        assert not any(o.kind == "distractor" for o in state.objects)

    def test_cluttered_groups_split_target_pair(self):
        for seed in range(20):
            state, instr, b = tasks.generate_cluttered_scene(np.random.default_rng(seed))
            tc = state.objects[b.target_cube]
            tb = state.objects[b.target_basket]
            other_basket = next(o for i, o in enumerate(state.objects)
                                if o.kind == "basket" and i != b.target_basket)
            assert tc.x * other_basket.x > 0     # share a group
            assert tc.x * tb.x < 0               # target basket is across

    def test_deploy_shift_draws_sit_at_range_edges(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            d = tasks.draw_dynamics(rng, tasks.DEPLOY_SHIFT)
            assert d.actuator_gain in P.GAIN_RANGE
            assert d.drag_scale in P.DRAG_RANGE
            assert d.mass_scale in P.MASS_RANGE
            assert abs(d.mount_dx) == P.MOUNT_XYZ
            assert abs(d.mount_dyaw) == P.MOUNT_YAW
            assert d.appearance_offset >= 0.05 - P.BAND_OFFSET_MAG - 1e-9

    def test_scripted_regime_disables_perturbations(self):
        d = tasks.draw_dynamics(np.random.default_rng(1), tasks.EVAL_SCRIPTED)
        assert d.arm_noise_mag == 0.0
        assert d.mount_dx == 0.0 and d.mount_dyaw == 0.0
