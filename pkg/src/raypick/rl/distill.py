"""Student update: supervised bottleneck losses, entropy-free TD for the
critic, and an actor step pulled toward the frozen privileged teacher by a
fixed-weight KL term.

One gradient-enabled pass through the visual stack serves both the
supervised losses and the actor loss; their parameter gradients accumulate
and the encoder, U-Net, and instruction table step once on the sum, so the
bottleneck is shaped by segmentation, depth, distillation KL, and Q pull
together. The critic reads the same features but detached: its TD gradient
stops at the encoder output, because the representation is already anchored
by the supervised and distillation terms and TD noise on a learned encoder
destabilizes both. The critic steps before the actor loss is evaluated;
gradients the actor backward leaves on critic weights are discarded by the
next update's zero_grad, never applied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tasks
from ..nn import core
from ..nn.core import Tensor
from ..nn.heads import gaussian_kl
from ..student import StudentPolicy, stationary_label
from ..teacher import PolicySetTeacher, assemble_obs


@dataclass
class DistillConfig:
    gamma: float = 0.99
    tau: float = 0.005
    kl_weight: float = 0.01       # fixed; replaces the entropy bonus
    teacher_sigma: float = 0.05   # modal dispersion assigned to the frozen reference
    q_weight: float = 1.0         # 0 drops the value pull (pure imitation)
    seg_coef: float = 1.0
    depth_coef: float = 1.0


def rollout_beta(step: int, total_steps: int) -> float:
    """Probability that an episode is driven by the student. Even split for
    the first 55% of the budget, then a linear ramp that hands every rollout
    to the student from 95% on."""
    f = step / max(1, total_steps)
    if f <= 0.55:
        return 0.5
    if f >= 0.95:
        return 1.0
    return 0.5 + 0.5 * (f - 0.55) / 0.40


def mixed_rollout_source(episode_index: int, beta: float, seed: int = 0) -> str:
    """Whole-episode actor draw, keyed by episode index so a rerun with the
    same seed reproduces the same teacher/student interleave."""
    u = np.random.default_rng([seed, 977, episode_index]).uniform()
    return "student" if u < beta else "teacher"


def _teacher_reference(teacher: PolicySetTeacher, batch: dict) -> tuple[np.ndarray, np.ndarray]:
    """Frozen-teacher pre-squash means and stationary labels for a batch.
    Routing is per stored stage; an unexpanded stage id raises."""
    base = assemble_obs(batch["priv"], batch["proprio"])
    stages = batch["stage"]
    mu_ref = np.zeros((len(base), tasks.ACT_DIM), dtype=np.float64)
    with core.no_grad():
        for s in np.unique(stages):
            idx = np.flatnonzero(stages == s)
            obs = Tensor(teacher.obs_for(base[idx], stages[idx]))
            d = teacher.dist(int(s), obs)
            mu_ref[idx] = d.mu.data
    greedy = tasks.ACT_CENTER + tasks.ACT_SCALE * np.tanh(mu_ref)
    return mu_ref, stationary_label(greedy)


def student_update(store, student: StudentPolicy, teacher: PolicySetTeacher,
                   cfg: DistillConfig, rng: np.random.Generator,
                   batch_size: int = 128) -> dict:
    batch = store.sample(rng, batch_size,
                         window_fields=("ray", "proprio", "priv"),
                         step_fields=("action", "reward", "gt_seg",
                                      "gt_depth", "tokens"))
    b = len(batch["reward"])
    rays = Tensor(batch["ray"])
    prop = Tensor(batch["proprio"].reshape(b, -1))
    tokens = batch["tokens"].astype(np.int64)
    mu_ref, stat_labels = _teacher_reference(teacher, batch)

    # one-step TD target, no entropy term; the value path runs through the
    # Polyak copy of the full feature stack, next action from the live actor
    with core.no_grad():
        n_rays = Tensor(batch["next_ray"])
        n_prop = Tensor(batch["next_proprio"].reshape(b, -1))
        h_next = student.features(n_rays, n_prop, tokens)[0]
        a_next = student.dist(h_next).sample_np(rng)
        logit = student.stationary(h_next).data[:, 0]
        stat_next = rng.uniform(size=b) < 1.0 / (1.0 + np.exp(-logit))
        a_next[np.ix_(stat_next, tasks.LOCO_DIMS)] = 0.0
        h_tgt = student.target_features(n_rays, n_prop, tokens)
        q_next = student.t_critic.min_q(h_tgt, Tensor(a_next.astype(np.float32)))
        y = batch["reward"] + cfg.gamma * (1.0 - batch["done"]) * q_next.data

    # single gradient-enabled pass through instruction, U-Net, and encoder
    student.opt_repr.zero_grad()
    student.opt_enc.zero_grad()
    student.opt_actor.zero_grad()
    h, seg_logits, depth, _ = student.features(rays, prop, tokens)

    # critic on detached features
    student.opt_critic.zero_grad()
    q1, q2 = student.critic.both(Tensor(h.data), Tensor(batch["action"]))
    y_t = Tensor(y.astype(np.float32))
    critic_loss = (core.square(q1 - y_t) + core.square(q2 - y_t)).mean()
    critic_loss.backward()
    student.opt_critic.step()

    # representation: CE over ray classes + L1 depth, equal weights
    ce = core.softmax_cross_entropy(seg_logits, batch["gt_seg"].astype(np.int64))
    l1 = core.absolute(depth - Tensor(batch["gt_depth"])).mean()

    # actor: -Q + fixed-weight KL(teacher || student) with locomotion dims
    # masked where the teacher stood still, plus the stationary-bit BCE
    dim_keep = np.ones((b, tasks.ACT_DIM), dtype=np.float32)
    dim_keep[np.ix_(stat_labels, tasks.LOCO_DIMS)] = 0.0
    d = student.dist(h)
    a_new, _ = d.rsample(rng)
    q_pi = student.critic.min_q(h, a_new)
    kl = gaussian_kl(mu_ref, cfg.teacher_sigma, d.mu, d.std, dim_keep=dim_keep)
    bce = core.bce_with_logits(student.stationary(h)[:, 0],
                               stat_labels.astype(np.float32))
    actor_loss = (cfg.kl_weight * kl - cfg.q_weight * q_pi).mean() + bce

    (cfg.seg_coef * ce + cfg.depth_coef * l1 + actor_loss).backward()
    student.opt_actor.step()
    student.opt_enc.step()
    student.opt_repr.step()
    student.sync_target(cfg.tau)

    seg_hit = (seg_logits.data.argmax(axis=1) == batch["gt_seg"]).mean()
    return {
        "critic_loss": float(critic_loss.data),
        "actor_loss": float(actor_loss.data),
        "q_mean": float(q_pi.data.mean()),
        "kl": float(kl.data.mean()),
        "ce": float(ce.data),
        "depth_l1": float(l1.data),
        "bce": float(bce.data),
        "seg_acc": float(seg_hit),
        "stationary_rate": float(stat_labels.mean()),
    }
