"""Clipped-surrogate policy optimization with GAE. Written against the Beta
policy interface: dist(obs) -> distribution with log_prob/entropy on
unit-interval samples, value(obs) -> state value."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import core
from ..nn.core import Adam, Tensor


@dataclass
class PPOConfig:
    horizon: int = 256
    epochs: int = 4
    minibatch: int = 512
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    lr: float = 3e-4
    vf_coef: float = 0.5
    ent_coef: float = 1e-3
    # tracking episodes end only by time limit; value targets should
    # bootstrap straight through the reset rather than treat it as absorbing
    bootstrap_timeouts: bool = True
    reward_scale: float = 1.0


def gae_advantages(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                   last_values: np.ndarray, gamma: float, lam: float):
    """(N, T) arrays, env-major. Episodes end only via `dones`; bootstrap
    through the horizon edge with last_values."""
    n, t = rewards.shape
    adv = np.zeros((n, t), dtype=np.float64)
    next_v = last_values.astype(np.float64)
    next_adv = np.zeros(n, dtype=np.float64)
    for i in range(t - 1, -1, -1):
        live = 1.0 - dones[:, i]
        delta = rewards[:, i] + gamma * next_v * live - values[:, i]
        next_adv = delta + gamma * lam * live * next_adv
        adv[:, i] = next_adv
        next_v = values[:, i]
    returns = adv + values
    return adv, returns


class PPOTrainer:
    def __init__(self, policy, envs: list, cfg: PPOConfig, rng: np.random.Generator):
        self.policy = policy
        self.envs = envs
        self.cfg = cfg
        self.rng = rng
        self.opt = Adam(policy.params(), lr=cfg.lr)
        self.obs = np.stack([e.reset() for e in envs])
        self.total_steps = 0
        self.last_ep_rewards: list[float] = []
        self._running_ep = np.zeros(len(envs))

    def collect(self):
        cfg, n = self.cfg, len(self.envs)
        t = cfg.horizon
        obs_buf = np.empty((n, t) + self.obs.shape[1:], dtype=np.float32)
        act_buf = np.empty((n, t, 2), dtype=np.float32)   # unit-interval samples
        logp_buf = np.empty((n, t), dtype=np.float32)
        rew_buf = np.empty((n, t), dtype=np.float32)
        val_buf = np.empty((n, t), dtype=np.float32)
        done_buf = np.zeros((n, t), dtype=np.float32)
        for i in range(t):
            with core.no_grad():
                d = self.policy.dist(Tensor(self.obs))
                v = self.policy.value(Tensor(self.obs)).data[:, 0]
                act = d.sample_np(self.rng)
                unit = d.to_unit(act)
                logp = d.log_prob(unit).data
            obs_buf[:, i] = self.obs
            act_buf[:, i] = unit
            logp_buf[:, i] = logp
            val_buf[:, i] = v
            for j, env in enumerate(self.envs):
                o, r, done = env.step(act[j])
                rew_buf[j, i] = r
                self._running_ep[j] += r
                if done:
                    done_buf[j, i] = 1.0
                    self.last_ep_rewards.append(self._running_ep[j])
                    self._running_ep[j] = 0.0
                    o = env.reset()
                self.obs[j] = o
        with core.no_grad():
            last_v = self.policy.value(Tensor(self.obs)).data[:, 0]
        gae_dones = np.zeros_like(done_buf) if cfg.bootstrap_timeouts else done_buf
        adv, ret = gae_advantages(rew_buf * cfg.reward_scale, val_buf, gae_dones,
                                  last_v, cfg.gamma, cfg.lam)
        self.total_steps += n * t
        flat = lambda a: a.reshape(-1, *a.shape[2:])
        return (flat(obs_buf), flat(act_buf), flat(logp_buf),
                flat(adv).astype(np.float32), flat(ret).astype(np.float32))

    def update(self, batch) -> dict:
        obs, act, logp_old, adv, ret = batch
        cfg = self.cfg
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        m = len(obs)
        stats = {"pi_loss": 0.0, "vf_loss": 0.0, "entropy": 0.0, "clip_frac": 0.0}
        passes = 0
        for _ in range(cfg.epochs):
            order = self.rng.permutation(m)
            for lo in range(0, m, cfg.minibatch):
                idx = order[lo:lo + cfg.minibatch]
                d = self.policy.dist(Tensor(obs[idx]))
                logp = d.log_prob(act[idx])
                ratio = core.exp(logp - logp_old[idx])
                a = Tensor(adv[idx])
                surr = core.minimum(ratio * a,
                                    core.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * a)
                pi_loss = -surr.mean()
                v = self.policy.value(Tensor(obs[idx]))[:, 0]
                vf_loss = core.square(v - Tensor(ret[idx])).mean()
                ent = d.entropy().mean()
                loss = pi_loss + cfg.vf_coef * vf_loss - cfg.ent_coef * ent
                self.opt.zero_grad()
                loss.backward()
                self.opt.step()
                stats["pi_loss"] += float(pi_loss.data)
                stats["vf_loss"] += float(vf_loss.data)
                stats["entropy"] += float(ent.data)
                stats["clip_frac"] += float(np.mean(
                    np.abs(ratio.data - 1.0) > cfg.clip))
                passes += 1
        return {k: v / max(passes, 1) for k, v in stats.items()}

    def train_iteration(self) -> dict:
        stats = self.update(self.collect())
        recent = self.last_ep_rewards[-20:]
        stats["ep_reward"] = float(np.mean(recent)) if recent else float("nan")
        stats["steps"] = self.total_steps
        return stats
