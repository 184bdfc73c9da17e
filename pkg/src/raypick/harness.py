"""Event-time episode harness: the two-rate loop.

Low control runs at 50 Hz, decisions at 10 Hz. Everything the policies see
flows through delayed channels: rate sensors (~3-13 ms), camera frames
(30-50 ms per frame), actuation (5-7 ms, blended across the sub-step), and
optionally policy compute (20-40 ms in deploy mode). Delays are modelled as
arrival times checked against the simulation clock, so zeroing every delay
reproduces a synchronous loop bit for bit.

Camera frames are captured as world snapshots and rasterized lazily: a frame
that is never consumed is never rendered, which keeps privileged-only
training runs free of ray marching.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tasks
from .lowlevel import clamp_command
from .sim import params as P
from .sim.camera import RayFrame, render_frame
from .sim.world import (Binding, Snapshot, WorldState, apply_arm_noise,
                        perturb_object, privileged_features, step_world)

EPS = 1e-9
STACK = 5                 # decision-time history depth
PROPRIO_DIM = 7
PRIV_FLAT = 6 * 12
TEACHER_OBS_DIM = STACK * (PRIV_FLAT + PROPRIO_DIM)   # 395


@dataclass
class LatencyConfig:
    sensor: bool = True
    camera: bool = True
    actuation: bool = True
    # "train": none; "deploy": 20-40 ms per decision; a float injects a
    # fixed compute delay in seconds (conformance probes use 0.150)
    compute: str | float = "train"

    @classmethod
    def zero(cls) -> "LatencyConfig":
        return cls(sensor=False, camera=False, actuation=False, compute="train")

    def compute_delay(self, rng: np.random.Generator) -> float:
        if self.compute == "train":
            return 0.0
        if self.compute == "deploy":
            return float(rng.uniform(*P.COMPUTE_DELAY_DEPLOY))
        return float(self.compute)


def proprio_vector(snap: Snapshot) -> np.ndarray:
    """Deployment-grade proprio: rates, heading, arm joints, grip command.
    Shared verbatim by the privileged teacher and the visual student."""
    v, w = snap.base[3], snap.base[4]
    yaw = snap.base[2]
    return np.array([v / 1.2, w / 1.0, math.sin(yaw), math.cos(yaw),
                     snap.arm_q[0] / 2.0, snap.arm_q[1] / 2.0, snap.grip],
                    dtype=np.float32)


class _Capture:
    __slots__ = ("t", "snap", "arrive", "frame")

    def __init__(self, t: float, snap: Snapshot, arrive: float):
        self.t = t
        self.snap = snap
        self.arrive = arrive
        self.frame: RayFrame | None = None


class HighView:
    """What a decision at time `t` may look at. Visual data renders on first
    access and is cached on the underlying capture."""

    def __init__(self, runner: "WorldRunner"):
        self._r = runner
        self.t = runner.state.t
        self.stage = runner.active_stage
        self.capture = runner._newest_arrived_capture()
        self.priv_stack = np.stack(runner._priv_stack)         # (5, 6, 12)
        self.proprio_stack = np.stack(runner._proprio_stack)   # (5, 7)
        self._caps = list(runner._view_caps)
        self.instruction = runner.instruction

    @property
    def frame(self) -> RayFrame:
        cap = self.capture
        if cap.frame is None:
            cap.frame = render_frame(self._r.state, self._r.binding,
                                     self._r.rng, noise=self._r.visual_noise,
                                     snap=cap.snap)
            self._r.frames_rendered += 1
        return cap.frame

    @property
    def frame_age(self) -> float:
        return self.t - self.capture.t

    def teacher_obs(self) -> np.ndarray:
        return np.concatenate([self.priv_stack.reshape(-1),
                               self.proprio_stack.reshape(-1)]).astype(np.float32)

    def ray_stack(self) -> np.ndarray:
        """(stack, N_RAYS) appearance history at the last decision times,
        oldest first. Renders lazily; repeats are cached on the capture."""
        rows = []
        for cap in self._caps:
            if cap.frame is None:
                cap.frame = render_frame(self._r.state, self._r.binding,
                                         self._r.rng, noise=self._r.visual_noise,
                                         snap=cap.snap)
                self._r.frames_rendered += 1
            rows.append(cap.frame.appearance)
        return np.stack(rows)


@dataclass
class HighResult:
    view: HighView
    reward: float
    done: bool
    success: bool
    failure: bool


@dataclass
class EpisodeResult:
    success: bool
    failure: bool
    timeout: bool
    high_steps: int
    sim_time: float
    reward_sum: float
    ever_stages: np.ndarray
    frames_rendered: int
    mean_frame_age: float


class WorldRunner:
    """Owns one episode. `step_high` advances one decision period (5 low
    ticks) under the given action and returns the next decision's view."""

    def __init__(self, state: WorldState, instruction: tasks.Instruction,
                 binding: Binding, low, rng: np.random.Generator,
                 regime: tasks.Regime = tasks.TRAIN,
                 latency: LatencyConfig | None = None,
                 visual_noise: bool | None = None,
                 w_retract: float = tasks.W_RETRACT):
        self.state = state
        self.instruction = instruction
        self.binding = binding
        self.low = low
        self.rng = rng
        self.regime = regime
        self.latency = latency or LatencyConfig()
        self.visual_noise = regime.visual_noise if visual_noise is None else visual_noise
        self.tracker = tasks.TaskTracker(state, binding, w_retract=w_retract)
        self.active_stage = self.tracker.stage

        self.t_high = 0
        self.frames_rendered = 0
        self._frame_ages: list[float] = []
        self._captures: list[_Capture] = []
        self._sensor_queue: list[tuple[float, np.ndarray]] = []
        self._hist = np.zeros((5, 2))          # low-level (v, w) history
        self._last_force = 0.0
        self._last_torque = 0.0
        # commands in flight: (arrival time, issuing high tick, action).
        # until the first arrival the null command steers (zeros, grip open)
        self._cmd_queue: list[tuple[float, int, np.ndarray]] = []
        self._active_cmd = np.zeros(tasks.ACT_DIM, dtype=np.float32)
        self._active_issue = -1
        self.t_low = 0
        self.low_trace: list[dict] | None = None

        boot = state.snap()
        self._capture(boot, instant=True)
        m = proprio_vector(boot)
        self._proprio_stack = [m.copy() for _ in range(STACK)]
        pf = privileged_features(state, binding, boot)
        self._priv_stack = [pf.copy() for _ in range(STACK)]
        # per-decision capture history backing the student's ray stack;
        # episode start repeats the boot frame
        self._view_caps: list[_Capture] = [self._captures[0]] * STACK

    # -- delayed channels -------------------------------------------------

    def _sensor_delay(self) -> float:
        if not self.latency.sensor:
            return 0.0
        d = self.state.draws.sensor_delay_mean \
            + self.rng.uniform(-P.SENSOR_JITTER, P.SENSOR_JITTER)
        return max(d, 0.0)

    def _capture(self, snap: Snapshot, instant: bool = False) -> None:
        if self.latency.camera and not instant:
            delay = self.rng.uniform(*P.CAMERA_DELAY_RANGE)
        else:
            delay = 0.0
        self._captures.append(_Capture(snap.t, snap, snap.t + delay))
        if len(self._captures) > 12:
            # drop stale never-consumed captures, keep the newest arrived
            arrived = [c for c in self._captures if c.arrive <= self.state.t + EPS]
            pending = [c for c in self._captures if c.arrive > self.state.t + EPS]
            self._captures = arrived[-2:] + pending

    def _newest_arrived_capture(self) -> _Capture:
        now = self.state.t
        best = self._captures[0]
        for c in self._captures:
            if c.arrive <= now + EPS and c.t >= best.t:
                best = c
        return best

    def _emit_sensor(self) -> None:
        s = self.state
        packet = np.array([s.v, s.w])
        self._sensor_queue.append((s.t + self._sensor_delay(), packet))

    def _drain_commands(self) -> None:
        now = self.state.t
        landed = [c for c in self._cmd_queue if c[0] <= now + EPS]
        if landed:
            _, self._active_issue, self._active_cmd = max(landed, key=lambda c: c[0])
            self._cmd_queue = [c for c in self._cmd_queue if c[0] > now + EPS]

    def _drain_sensors(self) -> None:
        now = self.state.t
        arrived = [p for p in self._sensor_queue if p[0] <= now + EPS]
        if arrived:
            arrived.sort(key=lambda p: p[0])
            for _, packet in arrived:
                self._hist[:-1] = self._hist[1:]
                self._hist[-1] = packet
            self._sensor_queue = [p for p in self._sensor_queue if p[0] > now + EPS]

    # -- scheduling -------------------------------------------------------

    def _run_schedulers(self) -> None:
        # draw at step 0 so noise is live from the start, then every period:
        # a 500-step episode sees exactly 10 resamples
        if self.regime.arm_noise_mag > 0.0 \
                and self.t_high % P.ARM_NOISE_PERIOD == 0:
            apply_arm_noise(self.state, self.rng)
        if self.regime.obj_perturb and self.tracker.stage in (2, 3, 5) \
                and self.rng.uniform() < P.OBJ_PERTURB_PROB:
            idx = self.binding.target_cube if self.tracker.stage in (2, 3) \
                else self.binding.target_basket
            perturb_object(self.state, idx, self.rng)

    # -- main loop --------------------------------------------------------

    def begin(self) -> HighView:
        return HighView(self)

    def enable_low_trace(self) -> None:
        """Record per-low-tick cadence and which decision steered each tick."""
        self.low_trace = []

    def dump_low_trace(self, path) -> None:
        with open(path, "w") as fh:
            for row in self.low_trace or []:
                fh.write(json.dumps(row) + "\n")

    def step_high(self, action: np.ndarray) -> HighResult:
        action = np.asarray(action, dtype=np.float32)
        arrive_t = self.state.t + self.latency.compute_delay(self.rng)
        self._cmd_queue.append((arrive_t, self.t_high, action))
        reward = 0.0
        self._run_schedulers()
        self.tracker.on_high_tick(self.state)

        for _ in range(P.HIGH_EVERY):
            self._drain_commands()
            act = self._active_cmd
            if self.low_trace is not None:
                self.low_trace.append({
                    "tick": self.t_low,
                    "t": round(float(self.state.t), 9),
                    "high": self.t_high,
                    "cmd_high": self._active_issue,
                    "cmd_age": self.t_high - self._active_issue,
                })
            # the commanded joint delta is the total motion for this decision;
            # each low tick applies an equal share so the per-call clamp never bites
            arm_delta = act[0:2] / P.HIGH_EVERY
            grip_target = float(act[2])
            v_cmd, w_cmd = float(act[3]), float(act[4])
            self._drain_sensors()
            f, tq = self.low.force_torque(self._hist, *clamp_command(v_cmd, w_cmd))
            if self.latency.actuation:
                frac = self.rng.uniform(*P.LOW_CTRL_DELAY_RANGE) / P.DT_LOW
                f_eff = self._last_force * frac + f * (1.0 - frac)
                tq_eff = self._last_torque * frac + tq * (1.0 - frac)
            else:
                f_eff, tq_eff = f, tq
            self._last_force, self._last_torque = f, tq

            prev = self.state.snap()
            step_world(self.state, f_eff, tq_eff, arm_delta, grip_target, P.DT_LOW)
            reward += self.tracker.step_reward(prev, self.state, self.active_stage)
            self._emit_sensor()
            self.t_low += 1
            if self.tracker.done:
                break

        self.t_high += 1
        self._capture(self.state.snap())
        if self.t_high % P.REPLAN_PERIOD == 0:
            self.active_stage = self.tracker.stage
        if self.tracker.done:
            self.active_stage = self.tracker.stage

        self._drain_sensors()
        cap = self._newest_arrived_capture()
        self._view_caps = self._view_caps[1:] + [cap]
        self._priv_stack = self._priv_stack[1:] + [
            privileged_features(self.state, self.binding, cap.snap)]
        m = proprio_vector(self.state.snap())
        m[0] = self._hist[-1, 0] / 1.2    # rates come from the delayed channel
        m[1] = self._hist[-1, 1] / 1.0
        self._proprio_stack = self._proprio_stack[1:] + [m]
        view = HighView(self)
        self._frame_ages.append(view.frame_age)
        return HighResult(view, reward, self.tracker.done,
                          self.tracker.success, self.tracker.failure)


def make_runner(seed: int, low, regime: tasks.Regime = tasks.TRAIN,
                latency: LatencyConfig | None = None,
                scene: str = "train", script_row: dict | None = None,
                w_retract: float = tasks.W_RETRACT) -> WorldRunner:
    rng = np.random.default_rng(seed)
    if scene == "train":
        state, instr, binding = tasks.generate_scene(rng, regime)
    elif scene == "cluttered":
        state, instr, binding = tasks.generate_cluttered_scene(rng, regime)
    elif scene == "scripted":
        state, instr, binding = tasks.scene_from_script_row(script_row, rng, regime)
    else:
        raise ValueError(f"unknown scene kind {scene!r}")
    return WorldRunner(state, instr, binding, low, rng, regime, latency,
                       w_retract=w_retract)


def run_episode(runner: WorldRunner, policy, max_high: int = P.EPISODE_HIGH_STEPS,
                recorder: "Recorder | None" = None) -> EpisodeResult:
    view = runner.begin()
    total = 0.0
    for _ in range(max_high):
        action = policy.act(view)
        res = runner.step_high(action)
        if recorder is not None:
            recorder.add(view, action, res)
        total += res.reward
        view = res.view
        if res.done:
            break
    tr = runner.tracker
    ages = runner._frame_ages
    return EpisodeResult(
        success=tr.success, failure=tr.failure,
        timeout=not tr.done, high_steps=runner.t_high,
        sim_time=runner.state.t, reward_sum=total,
        ever_stages=tr.ever.copy(), frames_rendered=runner.frames_rendered,
        mean_frame_age=float(np.mean(ages)) if ages else 0.0)


class Recorder:
    """Per-high-tick episode trace. Arrays for training replay, JSONL rows
    for inspection and the teleop/replay CLI."""

    def __init__(self, want_frames: bool = False):
        self.want_frames = want_frames
        self.rows: list[dict] = []
        self.teacher_obs: list[np.ndarray] = []
        self.actions: list[np.ndarray] = []
        self.rewards: list[float] = []
        self.stages: list[int] = []
        self.dones: list[bool] = []
        self.frames: list[np.ndarray] = []
        self.gt_seg: list[np.ndarray] = []
        self.gt_depth: list[np.ndarray] = []
        self.proprio: list[np.ndarray] = []
        self.tokens: np.ndarray | None = None

    def add(self, view: HighView, action: np.ndarray, res: HighResult) -> None:
        if self.tokens is None:
            self.tokens = view.instruction.tokens()
        self.teacher_obs.append(view.teacher_obs())
        self.actions.append(np.asarray(action, dtype=np.float32))
        self.rewards.append(res.reward)
        self.stages.append(view.stage)
        self.dones.append(res.done)
        self.proprio.append(view.proprio_stack.copy())
        if self.want_frames:
            fr = view.frame
            self.frames.append(fr.appearance)
            self.gt_seg.append(fr.seg)
            self.gt_depth.append(fr.depth)
        st = view._r.state
        self.rows.append({
            "t": round(view.t, 3), "stage": int(view.stage),
            "base": [round(st.x, 4), round(st.y, 4), round(st.yaw, 4)],
            "grip": round(st.grip, 3), "held": int(st.held),
            "action": [round(float(a), 4) for a in action],
            "reward": round(res.reward, 4),
            "success": res.success, "failure": res.failure,
        })

    def to_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for row in self.rows:
                fh.write(json.dumps(row) + "\n")

    def to_npz(self, path: str | Path) -> None:
        np.savez_compressed(
            path, teacher_obs=np.stack(self.teacher_obs),
            actions=np.stack(self.actions), rewards=np.array(self.rewards),
            stages=np.array(self.stages), dones=np.array(self.dones),
            proprio=np.stack(self.proprio), tokens=self.tokens,
            **({"frames": np.stack(self.frames), "gt_seg": np.stack(self.gt_seg),
                "gt_depth": np.stack(self.gt_depth)} if self.frames else {}))
