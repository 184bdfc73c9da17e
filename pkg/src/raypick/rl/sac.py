"""Soft actor-critic update for the stage-structured teacher.

A sampled batch is routed per sample to the sub-network owning its stage
id, so gradients never leak across stages. Transitions that cross a stage
boundary bootstrap from the *next* stage's policy and target critics
(grouped by next-stage id), keeping each bundle's value function
consistent with the controller that actually takes over. The
single-network baseline flows through the same code path with one bundle
and a stage one-hot in the observation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tasks
from ..nn import core
from ..nn.core import Tensor
from ..teacher import PolicySetTeacher, assemble_obs


@dataclass
class SACConfig:
    gamma: float = 0.99
    tau: float = 0.005
    target_entropy: float = -float(tasks.ACT_DIM)   # normalized action units


# The heads emit log-densities in physical action units, where the tiny arm
# ranges add -sum(log scale) to every log-prob. The -act_dim entropy target
# is stated in normalized (pre-scale) units; shifting it by the scale
# log-determinant keeps it reachable for every prior-masked stage.
SCALE_LOGDET = float(np.sum(np.log(tasks.ACT_SCALE)))


def _mask_rows(stages: np.ndarray) -> np.ndarray:
    """Per-row behavior-prior masks for a mixed-stage batch, (B, act_dim)."""
    return np.stack([tasks.prior_mask(int(s)) for s in stages])


def bootstrap_values(teacher: PolicySetTeacher, batch: dict,
                     cfg: SACConfig, rng: np.random.Generator) -> np.ndarray:
    """Entropy-regularized next-state values, grouped by next stage.
    Terminal rows are left at zero (their bootstrap is masked anyway)."""
    next_base = assemble_obs(batch["next_priv"], batch["next_proprio"])
    next_stage = batch["next_stage"]
    live = batch["done"] < 0.5
    out = np.zeros(len(next_base), dtype=np.float64)
    with core.no_grad():
        for s in np.unique(next_stage[live]):
            idx = np.flatnonzero(live & (next_stage == s))
            b = teacher.bundle(int(s))
            obs = Tensor(teacher.obs_for(next_base[idx], next_stage[idx]))
            d = teacher.dist(int(s), obs)
            act, logp = d.rsample(rng)
            tq = b.target.min_q(obs, act)
            out[idx] = tq.data - b.alpha * logp.data
    return out


def update(teacher: PolicySetTeacher, batch: dict, cfg: SACConfig,
           rng: np.random.Generator, stage: int | None = None) -> dict:
    """One gradient step on the bundle owning `stage` (None = the shared
    baseline bundle on a mixed-stage batch). Critic, then actor, then
    temperature, then a soft target sync."""
    if stage is None and teacher.kind != "monolithic":
        raise ValueError("mixed-stage update is only for the shared baseline")
    bundle = teacher.bundle(stage if stage is not None else 1)
    obs_np = teacher.obs_for(assemble_obs(batch["priv"], batch["proprio"]),
                             batch["stage"])
    act_np = batch["action"].astype(np.float32)

    next_v = bootstrap_values(teacher, batch, cfg, rng)
    y = (batch["reward"] + cfg.gamma * (1.0 - batch["done"]) * next_v
         ).astype(np.float32)

    obs = Tensor(obs_np)
    q1, q2 = bundle.critic.both(obs, Tensor(act_np))
    critic_loss = (core.square(q1 - y).mean() + core.square(q2 - y).mean())
    bundle.opt_critic.zero_grad()
    critic_loss.backward()
    bundle.opt_critic.step()

    if stage is not None:
        mask = tasks.prior_mask(stage)
    else:
        mask = _mask_rows(batch["stage"])
    d = bundle.actor(obs, mask)
    a_new, logp = d.rsample(rng)
    q_new = bundle.critic.min_q(obs, a_new)
    actor_loss = (bundle.alpha * logp - q_new).mean()
    bundle.opt_actor.zero_grad()
    actor_loss.backward()
    bundle.opt_actor.step()

    # temperature chases the entropy target; logp is detached here
    target_h = cfg.target_entropy + SCALE_LOGDET
    alpha_loss = -(bundle.log_alpha * (logp.data + target_h)).mean()
    bundle.opt_alpha.zero_grad()
    alpha_loss.backward()
    bundle.opt_alpha.step()

    bundle.sync_target(cfg.tau)
    return {
        "critic_loss": float(critic_loss.data),
        "actor_loss": float(actor_loss.data),
        "alpha": bundle.alpha,
        "q_mean": float(q1.data.mean()),
        "entropy": float(-logp.data.mean()) - SCALE_LOGDET,   # normalized units
        "target_mean": float(y.mean()),
    }


def teacher_update(teacher: PolicySetTeacher, store, cfg: SACConfig,
                   rng: np.random.Generator, batch_size: int = 256,
                   env_step: int = 0) -> dict:
    """Sample a mixed batch and route each sample to its stage's bundle.
    Stages appearing in the batch without a policy expand first."""
    batch = store.sample(rng, batch_size)
    seen = np.concatenate([batch["stage"],
                           batch["next_stage"][batch["done"] < 0.5]])
    for k in np.unique(seen):
        teacher.maybe_expand(int(k), env_step)

    if teacher.kind == "monolithic":
        return update(teacher, batch, cfg, rng, stage=None)

    pooled = ("critic_loss", "actor_loss", "q_mean", "entropy")
    agg: dict[str, float] = dict.fromkeys(pooled, 0.0)
    for k in np.unique(batch["stage"]):
        idx = np.flatnonzero(batch["stage"] == k)
        sub = {f: v[idx] for f, v in batch.items()}
        stats = update(teacher, sub, cfg, rng, stage=int(k))
        w = len(idx) / batch_size
        for f in pooled:
            agg[f] += w * stats[f]
        agg[f"alpha_k{int(k)}"] = stats["alpha"]
    return agg
