"""Velocity-tracking layer: 50 Hz force/torque control of the base.

The policy sees a short history of measured body rates plus the commanded
rates and outputs normalized force/torque through a Beta head (bounded
actions, no squash bias at the rails). An inverse-dynamics PD controller is
kept as an analytic reference: tests compare the trained policy against it
and it backstops pilot runs.
"""

from __future__ import annotations

import math

import numpy as np

from .nn import core
from .nn.core import MLP, Module, Tensor
from .nn.heads import BetaDist, BetaHead
from .sim import params as P
from .sim.world import WorldState, step_world

HIST = 5
OBS_DIM = 2 * HIST + 2
CMD_RESAMPLE_STEPS = 150      # 3 s at 50 Hz
EPISODE_STEPS = 600           # 12 s
STATIONARY_EP_PROB = 0.1

_V_SCALE = max(abs(P.V_CMD_LO), P.V_CMD_HI)


def clamp_command(v_cmd: float, w_cmd: float) -> tuple[float, float]:
    return (min(max(v_cmd, P.V_CMD_LO), P.V_CMD_HI),
            min(max(w_cmd, -P.W_CMD_MAX), P.W_CMD_MAX))


def pd_force_torque(v: float, w: float, v_cmd: float, w_cmd: float,
                    kp_v: float = 8.0, kp_w: float = 8.0) -> tuple[float, float]:
    """Inverse dynamics under nominal draws: feedforward cancels drag at the
    setpoint, proportional term closes the loop. Randomized gain/drag/mass
    leave a tracking residual the learned policy is expected to beat."""
    f = P.BASE_MASS * (P.LIN_DRAG * v_cmd + kp_v * (v_cmd - v))
    tq = P.BASE_INERTIA * (P.ANG_DRAG * w_cmd + kp_w * (w_cmd - w))
    return (min(max(f, -P.F_MAX), P.F_MAX), min(max(tq, -P.TAU_MAX), P.TAU_MAX))


def make_obs(hist: np.ndarray, v_cmd: float, w_cmd: float) -> np.ndarray:
    """hist is (HIST, 2) measured (v, w), oldest first."""
    out = np.empty(OBS_DIM, dtype=np.float32)
    out[:2 * HIST:2] = hist[:, 0] / _V_SCALE
    out[1:2 * HIST:2] = hist[:, 1] / P.W_CMD_MAX
    out[-2] = v_cmd / _V_SCALE
    out[-1] = w_cmd / P.W_CMD_MAX
    return out


class TrackerPolicy(Module):
    """Actor-critic for rate tracking. Actions live in [-1, 1]^2 and scale to
    (F_MAX, TAU_MAX)."""

    def __init__(self, rng: np.random.Generator, hidden: int = 64):
        self.trunk = MLP([OBS_DIM, hidden, hidden], rng)
        self.head = BetaHead(hidden, 2, lo=[-1.0, -1.0], hi=[1.0, 1.0], rng=rng)
        self.critic = MLP([OBS_DIM, hidden, hidden, 1], rng)

    def dist(self, obs: Tensor) -> BetaDist:
        return self.head(core.relu(self.trunk(obs)))

    def value(self, obs: Tensor) -> Tensor:
        return self.critic(obs)

    def act_np(self, obs: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        single = obs.ndim == 1
        with core.no_grad():
            d = self.dist(Tensor(obs.reshape(1, -1) if single else obs))
        a = d.mean_np() if rng is None else d.sample_np(rng)
        return a[0] if single else a

    def force_torque(self, hist: np.ndarray, v_cmd: float, w_cmd: float) -> tuple[float, float]:
        a = self.act_np(make_obs(hist, v_cmd, w_cmd))
        return float(a[0]) * P.F_MAX, float(a[1]) * P.TAU_MAX


class PDLow:
    """Drop-in low controller built on the analytic reference; used by pilots
    and as the harness default before a trained tracker exists."""

    def force_torque(self, hist: np.ndarray, v_cmd: float, w_cmd: float) -> tuple[float, float]:
        v, w = hist[-1]
        return pd_force_torque(float(v), float(w), v_cmd, w_cmd)


def tracking_reward(v: float, w: float, v_cmd: float, w_cmd: float) -> float:
    r = math.exp(-abs(v - v_cmd) / max(abs(v_cmd), 0.5))
    r += math.exp(-abs(w - w_cmd))
    if v_cmd == 0.0 and w_cmd == 0.0:
        r -= abs(v) + abs(w)
    return r


class TrackingEnv:
    """Bare-base episodes over randomized dynamics; commands are piecewise
    constant, resampled every 3 s. One episode in ten commands all-zero so
    holding still is explicitly on-distribution."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.state: WorldState | None = None
        self.hist = np.zeros((HIST, 2))
        self.cmd = (0.0, 0.0)
        self.t = 0
        self.stationary_ep = False

    def _resample_cmd(self) -> None:
        if self.stationary_ep:
            self.cmd = (0.0, 0.0)
        else:
            self.cmd = (float(self.rng.uniform(P.V_CMD_LO, P.V_CMD_HI)),
                        float(self.rng.uniform(-P.W_CMD_MAX, P.W_CMD_MAX)))

    def reset(self) -> np.ndarray:
        from .tasks import TRAIN, draw_dynamics
        draws = draw_dynamics(self.rng, TRAIN)
        self.state = WorldState([], self.rng, draws,
                                yaw=float(self.rng.uniform(-math.pi, math.pi)))
        self.state.arm_q = np.array([self.rng.uniform(P.Q_LO[0], P.Q_HI[0]),
                                     self.rng.uniform(P.Q_LO[1], P.Q_HI[1])])
        self.hist[:] = 0.0
        self.t = 0
        self.stationary_ep = self.rng.uniform() < STATIONARY_EP_PROB
        self._resample_cmd()
        return make_obs(self.hist, *self.cmd)

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool]:
        s = self.state
        f = float(np.clip(action[0], -1.0, 1.0)) * P.F_MAX
        tq = float(np.clip(action[1], -1.0, 1.0)) * P.TAU_MAX
        step_world(s, f, tq, np.zeros(2), s.grip_target, P.DT_LOW)
        # keep it on the mat: tracking cares about rates, not position
        s.x = min(max(s.x, -P.ARENA_HALF + 0.5), P.ARENA_HALF - 0.5)
        s.y = min(max(s.y, -P.ARENA_HALF + 0.5), P.ARENA_HALF - 0.5)
        s.out_of_bounds = False
        self.hist[:-1] = self.hist[1:]
        self.hist[-1] = (s.v, s.w)
        r = tracking_reward(s.v, s.w, *self.cmd)
        self.t += 1
        if self.t % CMD_RESAMPLE_STEPS == 0:
            self._resample_cmd()
        done = self.t >= EPISODE_STEPS
        return make_obs(self.hist, *self.cmd), r, done


def eval_tracking(policy, seeds=range(5), episodes_per_seed: int = 2,
                  settle_steps: int = 25, use_pd: bool = False) -> dict:
    """Mean absolute rate errors, measured after a settle window following
    each command switch. Returns per-channel errors plus stationary drift."""
    v_errs, w_errs, drift = [], [], []
    for seed in seeds:
        rng = np.random.default_rng(1000 + seed)
        env = TrackingEnv(rng)
        for _ in range(episodes_per_seed):
            obs = env.reset()
            since_switch = 0
            for t in range(EPISODE_STEPS):
                if use_pd:
                    s = env.state
                    f, tq = pd_force_torque(s.v, s.w, *env.cmd)
                    action = np.array([f / P.F_MAX, tq / P.TAU_MAX])
                else:
                    action = policy.act_np(obs)
                obs, _, done = env.step(action)
                since_switch = (since_switch + 1) % CMD_RESAMPLE_STEPS
                if since_switch >= settle_steps or since_switch == 0:
                    s = env.state
                    v_errs.append(abs(s.v - env.cmd[0]))
                    w_errs.append(abs(s.w - env.cmd[1]))
                    if env.cmd == (0.0, 0.0):
                        drift.append(abs(s.v) + abs(s.w))
                if done:
                    break
    return {"v_err": float(np.mean(v_errs)), "w_err": float(np.mean(w_errs)),
            "stationary_drift": float(np.mean(drift)) if drift else 0.0}
