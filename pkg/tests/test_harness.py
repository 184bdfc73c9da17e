"""Event-time loop: bit-parity with a synchronous reference when all delays
are zero, staleness when they are not, lazy rendering, schedulers."""

import json
import math

import numpy as np
import pytest

from raypick import tasks
from raypick.harness import (LatencyConfig, Recorder, WorldRunner,
                             make_runner, run_episode)
from raypick.lowlevel import PDLow, pd_force_torque
from raypick.sim import params as P
from raypick.sim.world import step_world
from raypick.tasks import TaskTracker


def scripted_action(i: int) -> np.ndarray:
    return np.array([0.01 * math.sin(i * 0.3), -0.005,
                     0.3 + 0.2 * math.sin(i * 0.2),
                     0.6 * math.sin(i * 0.1), 0.4 * math.cos(i * 0.17)],
                    dtype=np.float32)


PARITY_REGIME = tasks.Regime("parity", arm_noise_mag=0.0, mount_on=False,
                             obj_perturb=False, distractors=False)


class TestZeroLatencyParity:
    def test_matches_synchronous_reference_bitwise(self):
        seed = 123
        runner = make_runner(seed, PDLow(), regime=PARITY_REGIME,
                             latency=LatencyConfig.zero())
        # identical scene through an identical generator stream
        rng = np.random.default_rng(seed)
        state, instr, binding = tasks.generate_scene(rng, PARITY_REGIME)
        tracker = TaskTracker(state, binding)
        active = tracker.stage
        t_high = 0

        runner.begin()
        for i in range(40):
            act = scripted_action(i)
            res = runner.step_high(act)

            # synchronous reference: same scheduling, no delay machinery
            tracker.on_high_tick(state)
            ref_reward = 0.0
            for _ in range(P.HIGH_EVERY):
                v_cmd = min(max(float(act[3]), P.V_CMD_LO), P.V_CMD_HI)
                w_cmd = min(max(float(act[4]), -P.W_CMD_MAX), P.W_CMD_MAX)
                f, tq = pd_force_torque(state.v, state.w, v_cmd, w_cmd)
                prev = state.snap()
                step_world(state, f, tq, act[0:2] / P.HIGH_EVERY,
                           float(act[2]), P.DT_LOW)
                ref_reward += tracker.step_reward(prev, state, active)
                if tracker.done:
                    break
            t_high += 1
            if t_high % P.REPLAN_PERIOD == 0 or tracker.done:
                active = tracker.stage

            rs = runner.state
            assert (rs.x, rs.y, rs.yaw, rs.v, rs.w) == (state.x, state.y,
                                                        state.yaw, state.v, state.w)
            assert np.array_equal(rs.arm_q, state.arm_q)
            assert rs.grip == state.grip and rs.held == state.held
            assert res.reward == pytest.approx(ref_reward, abs=0.0)
            if res.done:
                break


class TestLatency:
    def test_camera_frames_arrive_stale(self):
        runner = make_runner(5, PDLow(), regime=PARITY_REGIME)
        view = runner.begin()
        assert view.frame_age == 0.0          # boot frame is instant
        for i in range(6):
            res = runner.step_high(scripted_action(i))
        # capture delay is 30-50 ms on a 100 ms cadence: the newest arrived
        # frame is always at least one period old
        assert res.view.frame_age >= 0.1 - 1e-9
        assert res.view.frame_age <= 0.25

    def test_zero_latency_frames_are_fresh(self):
        runner = make_runner(5, PDLow(), regime=PARITY_REGIME,
                             latency=LatencyConfig.zero())
        runner.begin()
        for i in range(3):
            res = runner.step_high(scripted_action(i))
        assert res.view.frame_age == 0.0

    def test_compute_delay_defers_command_effect(self):
        def travel(compute):
            runner = make_runner(7, PDLow(), regime=PARITY_REGIME,
                                 latency=LatencyConfig(sensor=False, camera=False,
                                                       actuation=False,
                                                       compute=compute))
            runner.begin()
            go = np.array([0, 0, 0.5, 1.2, 0], dtype=np.float32)
            x0, y0 = runner.state.x, runner.state.y
            for _ in range(10):
                runner.step_high(go)
            return math.hypot(runner.state.x - x0, runner.state.y - y0)

        assert travel("train") > travel("deploy") + 1e-6

    def test_injected_150ms_latency_conformance(self, tmp_path):
        # a decision computed at t lands at t+0.15, i.e. midway through the
        # NEXT high period: its first low ticks must fall back on the command
        # issued two decisions earlier, with the 50 Hz cadence untouched
        lat = LatencyConfig(sensor=False, camera=False, actuation=False,
                            compute=0.150)
        runner = make_runner(7, PDLow(), regime=PARITY_REGIME, latency=lat)
        runner.enable_low_trace()
        runner.begin()
        for i in range(12):
            runner.step_high(scripted_action(i))

        rows = runner.low_trace
        ts = np.array([r["t"] for r in rows])
        assert np.allclose(np.diff(ts), P.DT_LOW, atol=1e-9)
        assert sum(1 for t in ts if t < 1.0 - 1e-9) == 50
        ages = [r["cmd_age"] for r in rows]
        assert max(ages) == 2
        assert any(a == 2 for a in ages)

        out = tmp_path / "trace.jsonl"
        runner.dump_low_trace(out)
        back = [json.loads(line) for line in out.read_text().splitlines()]
        assert back == rows

    def test_zero_latency_commands_apply_at_once(self):
        runner = make_runner(7, PDLow(), regime=PARITY_REGIME,
                             latency=LatencyConfig.zero())
        runner.enable_low_trace()
        runner.begin()
        for i in range(4):
            runner.step_high(scripted_action(i))
        assert all(r["cmd_age"] == 0 for r in runner.low_trace)

    def test_sensor_history_lags_truth(self):
        runner = make_runner(11, PDLow(), regime=PARITY_REGIME)
        runner.begin()
        go = np.array([0, 0, 0.5, 1.2, 0], dtype=np.float32)
        diffs = []
        for _ in range(10):
            runner.step_high(go)
            diffs.append(abs(runner._hist[-1, 0] - runner.state.v))
        assert max(diffs) > 0.0   # accelerating: delayed reading trails truth


class TestLazyRendering:
    def test_untouched_frames_never_render(self):
        runner = make_runner(3, PDLow(), regime=PARITY_REGIME)
        runner.begin()
        for i in range(20):
            runner.step_high(scripted_action(i))
        assert runner.frames_rendered == 0

    def test_frame_renders_once_and_caches(self):
        runner = make_runner(3, PDLow(), regime=PARITY_REGIME)
        view = runner.begin()
        f1 = view.frame
        f2 = view.frame
        assert runner.frames_rendered == 1
        assert f1 is f2


class TestSchedulers:
    def test_object_perturbations_fire_during_approach(self):
        # training regime, policy standing still at stage 2: the focal cube
        # must get teleported at least once over 300 ticks under this seed
        for seed in range(4):
            runner = make_runner(seed, PDLow(), regime=tasks.TRAIN)
            if runner.tracker.stage not in (2, 3):
                continue
            cube = runner.state.objects[runner.binding.target_cube]
            before = (cube.x, cube.y)
            still = np.zeros(5, dtype=np.float32)
            runner.begin()
            moved = False
            for _ in range(300):
                runner.step_high(still)
                if (cube.x, cube.y) != before:
                    moved = True
                    break
            assert moved
            return
        pytest.skip("no seed in range started at an approach stage")

    def test_arm_noise_resample_count_matches_period(self):
        runner = make_runner(5, PDLow(), regime=tasks.TRAIN)
        runner.begin()
        still = np.zeros(5, dtype=np.float32)
        fires = 0
        prev = runner.state.arm_noise_offset.copy()
        for _ in range(500):
            runner.step_high(still)
            if not np.array_equal(runner.state.arm_noise_offset, prev):
                fires += 1
                prev = runner.state.arm_noise_offset.copy()
            assert not runner.tracker.done
        assert fires == 10

    def test_arm_noise_kicks_on_schedule(self):
        runner = make_runner(2, PDLow(), regime=tasks.TRAIN)
        runner.begin()
        still = np.zeros(5, dtype=np.float32)
        q_trace = []
        for _ in range(P.ARM_NOISE_PERIOD * 2 + 1):
            runner.step_high(still)
            q_trace.append(runner.state.arm_q.copy())
        q_trace = np.stack(q_trace)
        jumps = np.abs(np.diff(q_trace, axis=0)).sum(axis=1)
        assert (jumps > 1e-6).sum() >= 1   # at least one kick landed

    def test_scripted_regime_is_quiescent(self):
        runner = make_runner(2, PDLow(), regime=tasks.EVAL_SCRIPTED,
                             scene="scripted",
                             script_row={"corners": {"TL": "B", "TR": "R",
                                                     "BL": "g", "BR": "r"},
                                         "instruction": {"cube": "g", "basket": "R"}})
        runner.begin()
        still = np.zeros(5, dtype=np.float32)
        q0 = runner.state.arm_q.copy()
        objs0 = [(o.x, o.y) for o in runner.state.objects]
        for _ in range(P.ARM_NOISE_PERIOD + 5):
            runner.step_high(still)
        assert np.array_equal(runner.state.arm_q, q0)
        assert [(o.x, o.y) for o in runner.state.objects] == objs0


class TestEpisodeDriver:
    class StillPolicy:
        def act(self, view):
            return np.zeros(5, dtype=np.float32)

    def test_run_episode_times_out_cleanly(self):
        runner = make_runner(1, PDLow(), regime=PARITY_REGIME)
        res = run_episode(runner, self.StillPolicy(), max_high=30)
        assert res.timeout and not res.success and not res.failure
        assert res.high_steps == 30
        assert res.ever_stages.shape == (7,)
        assert res.frames_rendered == 0

    def test_teacher_obs_layout(self):
        runner = make_runner(1, PDLow(), regime=PARITY_REGIME)
        view = runner.begin()
        obs = view.teacher_obs()
        assert obs.shape == (395,)
        assert obs.dtype == np.float32

    def test_recorder_roundtrip(self, tmp_path):
        runner = make_runner(1, PDLow(), regime=PARITY_REGIME)
        rec = Recorder(want_frames=True)
        run_episode(runner, self.StillPolicy(), max_high=8, recorder=rec)
        npz = tmp_path / "ep.npz"
        rec.to_npz(npz)
        data = np.load(npz)
        assert data["teacher_obs"].shape == (8, 395)
        assert data["actions"].shape == (8, 5)
        assert data["frames"].shape == (8, P.N_RAYS)
        assert data["gt_seg"].dtype == np.uint8
        assert data["tokens"].shape[0] == tasks.TOKEN_LEN
        jsonl = tmp_path / "ep.jsonl"
        rec.to_jsonl(jsonl)
        assert len(jsonl.read_text().strip().splitlines()) == 8
