"""Task-level teacher trained on privileged state: a set of per-stage policies
grown on first encounter of each stage, plus the single-network baseline.

Each stage owns an actor, twin critics with targets, and an auto-tuned
temperature. Behavior priors enter through the action head's mask: stages
that should not translate (grasp, place, drop) get both base-command dims
pinned to zero-mode, search stages pin forward motion only.
"""

from __future__ import annotations

import numpy as np

from . import tasks
from .harness import TEACHER_OBS_DIM, HighView
from .nn import core
from .nn.core import MLP, Adam, Module, Tensor
from .nn.heads import SquashedGaussian, SquashedGaussianHead

N_STAGES = tasks.N_STAGES
HEAD_SCALE = tasks.ACT_SCALE
HEAD_CENTER = tasks.ACT_CENTER


def assemble_obs(priv_win: np.ndarray, proprio_win: np.ndarray) -> np.ndarray:
    """(B, stack, 6, 12) + (B, stack, 7) -> (B, 395), matching
    HighView.teacher_obs ordering."""
    b = priv_win.shape[0]
    return np.concatenate([priv_win.reshape(b, -1),
                           proprio_win.reshape(b, -1)], axis=1).astype(np.float32)


class StageActor(Module):
    def __init__(self, rng: np.random.Generator, obs_dim: int, hidden: int):
        self.trunk = MLP([obs_dim, hidden, hidden], rng)
        self.head = SquashedGaussianHead(hidden, tasks.ACT_DIM,
                                         scale=HEAD_SCALE, center=HEAD_CENTER,
                                         rng=rng)

    def __call__(self, obs: Tensor, mask: np.ndarray | None) -> SquashedGaussian:
        return self.head(core.relu(self.trunk(obs)), mask)


class TwinCritic(Module):
    def __init__(self, rng: np.random.Generator, obs_dim: int, hidden: int):
        self.q1 = MLP([obs_dim + tasks.ACT_DIM, hidden, hidden, 1], rng)
        self.q2 = MLP([obs_dim + tasks.ACT_DIM, hidden, hidden, 1], rng)

    def both(self, obs: Tensor, act: Tensor) -> tuple[Tensor, Tensor]:
        x = core.concat([obs, act], axis=-1)
        return self.q1(x)[:, 0], self.q2(x)[:, 0]

    def min_q(self, obs: Tensor, act: Tensor) -> Tensor:
        a, b = self.both(obs, act)
        return core.minimum(a, b)


class _Bundle(Module):
    def __init__(self, rng: np.random.Generator, obs_dim: int, hidden: int,
                 lr: float, alpha_init: float, alpha_lr: float):
        self.actor = StageActor(rng, obs_dim, hidden)
        self.critic = TwinCritic(rng, obs_dim, hidden)
        self.target = TwinCritic(rng, obs_dim, hidden)
        self.target.load_state_dict(self.critic.state_dict())
        # shape (1,): 0-d arrays do not survive the checkpoint container
        self.log_alpha = core.param(np.full(1, np.log(alpha_init)))
        self.opt_actor = Adam(self.actor.params(), lr=lr)
        self.opt_critic = Adam(self.critic.params(), lr=lr)
        # temperature gets its own, faster rate: if it lags the actor the
        # soft-value offset (-alpha * target_entropy / (1 - gamma)) drifts
        # and the critic chases it instead of the task reward
        self.opt_alpha = Adam([self.log_alpha], lr=alpha_lr)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data[0]))

    def named_params(self, prefix=""):
        # targets and optimizer state are reconstructed, not checkpointed
        yield from self.actor.named_params(prefix + "actor.")
        yield from self.critic.named_params(prefix + "critic.")
        yield (prefix + "log_alpha", self.log_alpha)

    def sync_target(self, tau: float) -> None:
        for (_, p), (_, t) in zip(self.critic.named_params(),
                                  self.target.named_params()):
            t.data *= 1.0 - tau
            t.data += tau * p.data


class PolicySetTeacher(Module):
    """One bundle per visited stage. maybe_expand allocates a fresh bundle
    the first time a stage id is seen and logs the step; lookups for stages
    never expanded raise instead of falling back."""

    kind = "policy-set"

    def __init__(self, seed: int, hidden: int = 128, lr: float = 3e-4,
                 alpha_init: float = 0.05, alpha_lr: float = 3e-3):
        self.seed = int(seed)
        self.hidden = hidden
        self.lr = lr
        self.alpha_init = alpha_init
        self.alpha_lr = alpha_lr
        self.obs_dim = TEACHER_OBS_DIM
        self.bundles: dict[int, _Bundle] = {}
        self.expansion_log: list[tuple[int, int]] = []   # (env_step, stage)

    @property
    def expanded(self) -> set[int]:
        return set(self.bundles)

    def _fresh_bundle(self, stage: int) -> _Bundle:
        # init stream keyed by (run seed, stage): the same stage expands to
        # the same weights no matter when it is first reached
        rng = np.random.default_rng([self.seed, stage])
        return _Bundle(rng, self.obs_dim, self.hidden, self.lr,
                       self.alpha_init, self.alpha_lr)

    def bundle(self, stage: int) -> _Bundle:
        try:
            return self.bundles[stage]
        except KeyError:
            raise KeyError(f"stage {stage} has no policy yet; "
                           f"expanded: {sorted(self.bundles)}") from None

    def maybe_expand(self, stage: int, env_step: int) -> bool:
        """Returns True when a new sub-policy was allocated."""
        stage = int(stage)
        if stage in self.bundles:
            return False
        if not 1 <= stage <= N_STAGES:
            raise ValueError(f"stage {stage} outside 1..{N_STAGES}")
        self.bundles[stage] = self._fresh_bundle(stage)
        self.expansion_log.append((int(env_step), stage))
        return True

    def obs_for(self, obs: np.ndarray, stage) -> np.ndarray:
        return obs

    def dist(self, stage: int, obs: Tensor) -> SquashedGaussian:
        return self.bundle(stage).actor(obs, tasks.prior_mask(stage))

    def act(self, view: HighView, rng: np.random.Generator | None = None) -> np.ndarray:
        obs = view.teacher_obs()[None]
        with core.no_grad():
            d = self.dist(view.stage, Tensor(obs))
        a = d.mode() if rng is None else d.sample_np(rng)
        return a[0]

    def named_params(self, prefix=""):
        for k in sorted(self.bundles):
            yield from self.bundles[k].named_params(f"{prefix}stage{k}.")

    def meta(self) -> dict:
        return {"kind": self.kind, "hidden": self.hidden, "seed": self.seed,
                "expansion_log": self.expansion_log}

    def load_meta(self, meta: dict) -> None:
        self.expansion_log = [tuple(x) for x in meta.get("expansion_log", [])]
        for b in self.bundles.values():
            b.target.load_state_dict(b.critic.state_dict())


class MonolithicTeacher(PolicySetTeacher):
    """Baseline: a single shared network that sees the stage as a one-hot
    suffix. Same training loop; the set never grows past one entry."""

    kind = "monolithic"

    def __init__(self, seed: int, hidden: int = 128, lr: float = 3e-4,
                 alpha_init: float = 0.05, alpha_lr: float = 3e-3):
        self.seed = int(seed)
        self.hidden = hidden
        self.lr = lr
        self.alpha_init = alpha_init
        self.alpha_lr = alpha_lr
        self.obs_dim = TEACHER_OBS_DIM + N_STAGES
        rng = np.random.default_rng([self.seed, 0])
        self.bundles = {0: _Bundle(rng, self.obs_dim, hidden, lr,
                                   alpha_init, alpha_lr)}
        self.expansion_log: list[tuple[int, int]] = []

    def bundle(self, stage: int) -> _Bundle:
        return self.bundles[0]

    def maybe_expand(self, stage: int, env_step: int) -> bool:
        return False

    def obs_for(self, obs: np.ndarray, stage) -> np.ndarray:
        single = obs.ndim == 1
        o = obs[None] if single else obs
        k = np.atleast_1d(stage)
        onehot = np.zeros((len(o), N_STAGES), dtype=np.float32)
        onehot[np.arange(len(o)), np.asarray(k) - 1] = 1.0
        out = np.concatenate([o, onehot], axis=1)
        return out[0] if single else out

    def act(self, view: HighView, rng: np.random.Generator | None = None) -> np.ndarray:
        obs = self.obs_for(view.teacher_obs(), view.stage)[None]
        with core.no_grad():
            d = self.dist(view.stage, Tensor(obs))
        a = d.mode() if rng is None else d.sample_np(rng)
        return a[0]

    def named_params(self, prefix=""):
        yield from self.bundles[0].named_params(prefix + "shared.")


def save_teacher(path, teacher: PolicySetTeacher, extra_meta: dict | None = None):
    from .nn import checkpoint
    checkpoint.save(path, teacher.state_dict(),
                    {**teacher.meta(), **(extra_meta or {})})


def load_teacher(path) -> PolicySetTeacher:
    from .nn import checkpoint
    tensors, meta = checkpoint.load(path)
    hidden = int(meta.get("hidden", 128))
    seed = int(meta.get("seed", 0))
    if meta.get("kind") == "monolithic":
        teacher: PolicySetTeacher = MonolithicTeacher(seed, hidden=hidden)
    else:
        teacher = PolicySetTeacher(seed, hidden=hidden)
        for step, stage in meta.get("expansion_log", []):
            teacher.maybe_expand(stage, step)
    teacher.load_state_dict(tensors)
    teacher.load_meta(meta)
    return teacher
