"""Visuomotor student training: mixed teacher/student rollouts feeding an
episode replay that stores per-tick ray rows and the frame's ground-truth
maps, fused distillation updates, periodic greedy evals.

Each rollout episode is driven entirely by one actor, drawn per episode with
probability beta for the student; beta follows the fixed ramp schedule. The
frozen teacher reads privileged state, the student only its deployment
inputs, but both kinds of episodes store the full record so every sample can
be supervised and distilled.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .. import config as cfgmod
from .. import tasks
from ..harness import make_runner
from ..rl.distill import (DistillConfig, mixed_rollout_source, rollout_beta,
                          student_update)
from ..rl.replay import EpisodeBuffer, ReplayStore
from ..sim import params as P
from ..student import StudentPolicy, save_student
from ..teacher import load_teacher
from .common import RunLogger
from .low import load_tracker
from .teacher import EVAL_HORIZON, HoldWhenUnknown


def variant_regime(variant: str) -> tasks.Regime:
    if variant == "no-perturbation":
        return tasks.TRAIN_NO_PERTURB
    if variant == "no-visual-aug":
        return tasks.TRAIN_NO_VISUAL
    return tasks.TRAIN


def variant_w_retract(variant: str) -> float:
    return 0.0 if variant == "no-retract" else tasks.W_RETRACT


def student_eval(student: StudentPolicy, low, seeds,
                 regime: tasks.Regime = tasks.TRAIN_NO_PERTURB,
                 horizon: int = EVAL_HORIZON,
                 w_retract: float = tasks.W_RETRACT) -> dict:
    """Greedy deployment rollouts; failures charged the full time limit."""
    succ, times, evers = [], [], []
    for s in seeds:
        runner = make_runner(int(s), low, regime=regime, w_retract=w_retract)
        view = runner.begin()
        for _ in range(horizon):
            res = runner.step_high(student.act(view))
            view = res.view
            if res.done:
                break
        tr = runner.tracker
        succ.append(tr.success)
        times.append(runner.state.t if tr.success else P.EVAL_TIME_LIMIT)
        evers.append(tr.ever.copy())
    cum = np.asarray(evers, dtype=np.float64).cumprod(axis=1).mean(axis=0)
    return {
        "success": float(np.mean(succ)),
        "episode_time": round(float(np.mean(times)), 2),
        "cum_stage": [round(float(c), 4) for c in cum],
    }


class _Worker:
    """One rollout world driven by a fixed per-episode actor. Stores the
    newest frame's appearance row plus its ground-truth maps every tick;
    ray windows are rebuilt at sample time."""

    def __init__(self, seed: int, low, regime: tasks.Regime, w_retract: float,
                 source: str):
        self.runner = make_runner(seed, low, regime=regime, w_retract=w_retract)
        self.view = self.runner.begin()
        self.source = source
        self.tokens = self.view.instruction.tokens()
        self.buf = EpisodeBuffer()
        self._slice()
        self.steps = 0

    def _slice(self) -> None:
        fr = self.view.frame
        self.buf.add_slice(ray=fr.appearance,
                           proprio=self.view.proprio_stack[-1],
                           priv=self.view.priv_stack[-1],
                           stage=self.view.stage)
        self._gt = (fr.seg, fr.depth)

    def step(self, action: np.ndarray):
        gt_seg, gt_depth = self._gt
        res = self.runner.step_high(action)
        self.buf.add_step(action=action.astype(np.float32),
                          reward=np.float32(res.reward),
                          gt_seg=gt_seg, gt_depth=gt_depth,
                          tokens=self.tokens,
                          source=np.float32(self.source == "student"))
        self.view = res.view
        self._slice()
        self.steps += 1
        episode = None
        if res.done or self.steps >= P.EPISODE_HIGH_STEPS:
            episode = self.buf.finalize(terminal=res.done)
        return episode, res


def train_student(out_dir: str | Path, overrides: dict | None = None) -> dict:
    cfg = cfgmod.merged(cfgmod.STUDENT_DEFAULTS, overrides)
    log = RunLogger(out_dir, cfg)
    seed = int(cfg["seed"])
    variant = cfg["variant"]
    regime = variant_regime(variant)
    w_retract = variant_w_retract(variant)
    low = load_tracker(cfg["low_ckpt"])
    teacher = load_teacher(Path(cfg["teacher_run"]) / "best.ckpt")
    teacher_actor = HoldWhenUnknown(teacher)

    student = StudentPolicy(seed, hidden=cfg["hidden"], lr=cfg["lr"])
    dcfg = DistillConfig(gamma=cfg["gamma"], tau=cfg["tau"],
                         kl_weight=cfg["kl_coef"],
                         teacher_sigma=cfg["teacher_sigma"],
                         q_weight=0.0 if variant == "distill-only" else 1.0,
                         seg_coef=cfg["bottleneck"]["seg_coef"],
                         depth_coef=cfg["bottleneck"]["depth_coef"])
    store = ReplayStore(capacity_ticks=cfg["replay"])
    rng = np.random.default_rng([seed, 2])
    total = int(cfg["total_high_steps"])

    n_envs = int(cfg["n_envs"])
    updates_per_sweep = max(1, n_envs // int(cfg["update_every"]))
    ep_counter = 0
    env_steps = 0

    def fresh_worker() -> _Worker:
        nonlocal ep_counter
        ep_counter += 1
        beta = rollout_beta(env_steps, total)
        source = mixed_rollout_source(ep_counter, beta, seed=seed)
        return _Worker(seed * 10_000_019 + ep_counter, low, regime,
                       w_retract, source)

    workers = [fresh_worker() for _ in range(n_envs)]

    updates = 0
    next_eval = int(cfg["eval_every"])
    best_success = -1.0
    loss_acc: dict[str, float] = {}
    loss_n = 0
    ep_stats = {"n": 0, "success": 0, "student_eps": 0, "reward": 0.0}

    while env_steps < total:
        for i in range(n_envs):
            w = workers[i]
            if w.source == "student":
                action = student.act(w.view, rng)
            elif w.view.stage in teacher.bundles:
                action = teacher.act(w.view, rng)
            else:
                action = teacher_actor.hold.copy()
            episode, res = w.step(action)
            env_steps += 1
            if episode is not None:
                store.add_episode(episode)
                ep_stats["n"] += 1
                ep_stats["success"] += int(res.success)
                ep_stats["student_eps"] += int(w.source == "student")
                ep_stats["reward"] += float(np.sum(episode["reward"]))
                workers[i] = fresh_worker()

        if len(store) >= cfg["warmup"]:
            for _ in range(updates_per_sweep):
                stats = student_update(store, student, teacher, dcfg, rng,
                                       batch_size=cfg["batch"])
                updates += 1
                for k, v in stats.items():
                    loss_acc[k] = loss_acc.get(k, 0.0) + v
                loss_n += 1

        if env_steps >= next_eval:
            next_eval += int(cfg["eval_every"])
            eval_seeds = [910_000_000 + seed * 1_000_000 + env_steps // 100 + i
                          for i in range(int(cfg["eval_episodes"]))]
            last_eval = student_eval(student, low, eval_seeds,
                                     w_retract=w_retract)
            n = max(ep_stats["n"], 1)
            row = {"step": env_steps, "updates": updates,
                   "beta": round(rollout_beta(env_steps, total), 4),
                   **last_eval,
                   "train_episodes": ep_stats["n"],
                   "train_success": round(ep_stats["success"] / n, 4),
                   "student_episode_frac": round(ep_stats["student_eps"] / n, 4),
                   "train_reward": round(ep_stats["reward"] / n, 3),
                   "replay_ticks": len(store)}
            for k, v in loss_acc.items():
                row[k] = round(v / max(loss_n, 1), 5)
            log.log(row)
            loss_acc, loss_n = {}, 0
            ep_stats = {"n": 0, "success": 0, "student_eps": 0, "reward": 0.0}
            log.save("last", student.state_dict(),
                     {**student.meta(), "env_steps": env_steps})
            if last_eval["success"] >= best_success:
                best_success = last_eval["success"]
                log.save("best", student.state_dict(),
                         {**student.meta(), "env_steps": env_steps,
                          "success": best_success})

    log.save("last", student.state_dict(),
             {**student.meta(), "env_steps": env_steps})
    summary = {"env_steps": env_steps, "updates": updates,
               "best_success": best_success}
    log.done(summary)
    return summary
