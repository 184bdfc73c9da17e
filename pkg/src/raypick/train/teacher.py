"""Stage-set teacher training: lockstep rollout workers feeding an
episode-window replay, stage-routed SAC updates, periodic greedy evals.

The budget is a fixed number of env high-steps shared by every variant so
the single-network comparison and the reward/perturbation ablations differ
only in the knob under study.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from .. import config as cfgmod
from .. import tasks
from ..harness import make_runner, run_episode
from ..rl.replay import EpisodeBuffer, ReplayStore
from ..rl.sac import SACConfig, teacher_update
from ..sim import params as P
from ..teacher import MonolithicTeacher, PolicySetTeacher
from .common import RunLogger
from .low import load_tracker

EVAL_HORIZON = 900          # 90 s at 10 Hz; training episodes cap at 600


def variant_regime(variant: str) -> tasks.Regime:
    return tasks.TRAIN_NO_PERTURB if variant == "no-perturbation" else tasks.TRAIN


def variant_w_retract(variant: str) -> float:
    return 0.0 if variant == "no-retract" else tasks.W_RETRACT


class HoldWhenUnknown:
    """Greedy eval wrapper: a stage the teacher has not expanded yet gets the
    neutral center action instead of a lookup error. Training-time lookups
    stay strict."""

    def __init__(self, teacher: PolicySetTeacher):
        self.teacher = teacher
        self.hold = tasks.ACT_CENTER.copy()

    def act(self, view) -> np.ndarray:
        if self.teacher.kind != "monolithic" \
                and view.stage not in self.teacher.bundles:
            return self.hold
        return self.teacher.act(view)


def greedy_eval(teacher, low, seeds, regime: tasks.Regime = tasks.TRAIN_NO_PERTURB,
                horizon: int = EVAL_HORIZON,
                w_retract: float = tasks.W_RETRACT) -> dict:
    """Deterministic rollouts on the training scene distribution with the
    in-episode disturbance schedulers off. Failed episodes are charged the
    full time limit."""
    policy = HoldWhenUnknown(teacher)
    succ, times, evers = [], [], []
    for s in seeds:
        runner = make_runner(int(s), low, regime=regime, w_retract=w_retract)
        res = run_episode(runner, policy, max_high=horizon)
        succ.append(res.success)
        times.append(res.sim_time if res.success else P.EVAL_TIME_LIMIT)
        evers.append(res.ever_stages)
    cum = np.asarray(evers, dtype=np.float64).cumprod(axis=1).mean(axis=0)
    return {
        "success": float(np.mean(succ)),
        "episode_time": round(float(np.mean(times)), 2),
        "cum_stage": [round(float(c), 4) for c in cum],
    }


class _Worker:
    """One rollout world plus the episode buffer being filled from it."""

    def __init__(self, seed: int, low, regime: tasks.Regime, w_retract: float):
        self.runner = make_runner(seed, low, regime=regime, w_retract=w_retract)
        self.view = self.runner.begin()
        self.buf = EpisodeBuffer()
        self._slice()
        self.steps = 0

    def _slice(self) -> None:
        self.buf.add_slice(priv=self.view.priv_stack[-1],
                           proprio=self.view.proprio_stack[-1],
                           stage=self.view.stage)

    def step(self, action: np.ndarray):
        res = self.runner.step_high(action)
        self.buf.add_step(action=action, reward=res.reward)
        self.view = res.view
        self._slice()
        self.steps += 1
        episode = None
        if res.done or self.steps >= P.EPISODE_HIGH_STEPS:
            episode = self.buf.finalize(terminal=res.done)
        return episode, res


def train_teacher(out_dir: str | Path, overrides: dict | None = None) -> dict:
    cfg = cfgmod.merged(cfgmod.TEACHER_DEFAULTS, overrides)
    log = RunLogger(out_dir, cfg)
    seed = int(cfg["seed"])
    variant = cfg["variant"]
    regime = variant_regime(variant)
    w_retract = variant_w_retract(variant)
    low = load_tracker(cfg["low_ckpt"])

    cls = MonolithicTeacher if variant == "monolithic" else PolicySetTeacher
    teacher: PolicySetTeacher = cls(seed, hidden=cfg["hidden"], lr=cfg["lr"],
                                    alpha_init=cfg["alpha_init"],
                                    alpha_lr=cfg["alpha_lr"])

    sac_cfg = SACConfig(gamma=cfg["gamma"], tau=cfg["tau"],
                        target_entropy=cfg["target_entropy"])
    store = ReplayStore(capacity_ticks=cfg["replay"])
    rng = np.random.default_rng([seed, 1])

    n_envs = int(cfg["n_envs"])
    updates_per_sweep = max(1, n_envs // int(cfg["update_every"]))
    ep_counter = 0

    def fresh_worker() -> _Worker:
        nonlocal ep_counter
        ep_counter += 1
        return _Worker(seed * 10_000_019 + ep_counter, low, regime, w_retract)

    workers = [fresh_worker() for _ in range(n_envs)]

    env_steps = 0
    updates = 0
    next_eval = int(cfg["eval_every"])
    best_success = -1.0
    last_eval: dict = {}
    loss_acc: dict[str, float] = {}
    loss_n = 0
    ep_stats = {"n": 0, "success": 0, "failure": 0, "timeout": 0, "reward": 0.0}

    while env_steps < cfg["total_high_steps"]:
        for i in range(n_envs):
            w = workers[i]
            teacher.maybe_expand(w.view.stage, env_steps)
            action = teacher.act(w.view, rng)
            episode, res = w.step(action)
            env_steps += 1
            if episode is not None:
                store.add_episode(episode)
                ep_stats["n"] += 1
                ep_stats["success"] += int(res.success)
                ep_stats["failure"] += int(res.failure)
                ep_stats["timeout"] += int(not res.done)
                ep_stats["reward"] += float(np.sum(episode["reward"]))
                workers[i] = fresh_worker()

        if len(store) >= cfg["warmup"]:
            for _ in range(updates_per_sweep):
                stats = teacher_update(teacher, store, sac_cfg, rng,
                                       batch_size=cfg["batch"],
                                       env_step=env_steps)
                updates += 1
                for k, v in stats.items():
                    loss_acc[k] = loss_acc.get(k, 0.0) + v
                loss_n += 1

        if env_steps >= next_eval:
            next_eval += int(cfg["eval_every"])
            eval_seeds = [900_000_000 + seed * 1_000_000 + env_steps // 100 + i
                          for i in range(int(cfg["eval_episodes"]))]
            last_eval = greedy_eval(teacher, low, eval_seeds,
                                    w_retract=w_retract)
            n = max(ep_stats["n"], 1)
            row = {"step": env_steps, "updates": updates, **last_eval,
                   "train_episodes": ep_stats["n"],
                   "train_success": round(ep_stats["success"] / n, 4),
                   "train_failure": round(ep_stats["failure"] / n, 4),
                   "train_timeout": round(ep_stats["timeout"] / n, 4),
                   "train_reward": round(ep_stats["reward"] / n, 3),
                   "replay_ticks": len(store),
                   "stage_counts": {str(k): v for k, v
                                    in sorted(store.stage_counts().items())},
                   "expanded": sorted(int(k) for k in teacher.bundles)}
            for k, v in loss_acc.items():
                row[k] = round(v / max(loss_n, 1), 5)
            log.log(row)
            loss_acc, loss_n = {}, 0
            ep_stats = {"n": 0, "success": 0, "failure": 0, "timeout": 0,
                        "reward": 0.0}
            log.save("last", teacher.state_dict(),
                     {**teacher.meta(), "env_steps": env_steps})
            if last_eval["success"] >= best_success:
                best_success = last_eval["success"]
                log.save("best", teacher.state_dict(),
                         {**teacher.meta(), "env_steps": env_steps,
                          "success": best_success})

    log.save("last", teacher.state_dict(),
             {**teacher.meta(), "env_steps": env_steps})
    summary = {"env_steps": env_steps, "updates": updates,
               "final_eval": last_eval, "best_success": best_success,
               "expansion_log": teacher.expansion_log,
               "wall_s": round(time.time() - log.t0, 1)}
    log.done(summary)
    return summary
