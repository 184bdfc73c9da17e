"""Train the velocity-tracking layer."""

from __future__ import annotations

import numpy as np

from .. import config as cfgmod
from ..lowlevel import TrackerPolicy, TrackingEnv, eval_tracking
from ..rl.ppo import PPOConfig, PPOTrainer
from .common import RunLogger


def train_low(out_dir: str, overrides: dict | None = None) -> dict:
    cfg = cfgmod.merged(cfgmod.LOW_DEFAULTS, overrides)
    log = RunLogger(out_dir, cfg)
    seed = cfg["seed"]
    rng = np.random.default_rng(seed)
    policy = TrackerPolicy(rng, hidden=cfg["hidden"])
    envs = [TrackingEnv(np.random.default_rng(seed * 10_000 + i))
            for i in range(cfg["n_envs"])]
    trainer = PPOTrainer(policy, envs, PPOConfig(**cfg["ppo"]), rng)

    best = -np.inf
    it = 0
    while trainer.total_steps < cfg["total_steps"]:
        stats = trainer.train_iteration()
        it += 1
        if it % 10 == 0:
            log.log({"it": it, **{k: round(float(v), 4) for k, v in stats.items()}})
        if it % 50 == 0 and not np.isnan(stats["ep_reward"]) \
                and stats["ep_reward"] > best:
            best = stats["ep_reward"]
            log.save("best", policy.state_dict(), {"steps": trainer.total_steps})

    metrics = eval_tracking(policy)
    log.save("last", policy.state_dict(),
             {"steps": trainer.total_steps, "eval": metrics})
    if best == -np.inf:
        log.save("best", policy.state_dict(), {"steps": trainer.total_steps})
    summary = {"steps": trainer.total_steps, "eval": metrics,
               "best_ep_reward": best if best > -np.inf else None}
    log.done(summary)
    return summary


def load_tracker(ckpt_path: str) -> TrackerPolicy:
    from ..nn import checkpoint
    tensors, meta = checkpoint.load(ckpt_path)
    policy = TrackerPolicy(np.random.default_rng(0))
    policy.load_state_dict(tensors)
    return policy
