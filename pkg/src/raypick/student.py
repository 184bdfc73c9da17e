"""Deployable visuomotor policy. The only sensors it may touch are the noisy
appearance rays, the proprio stack, and the instruction bytes; everything the
actor and critic see beyond proprio passes through a predicted
segmentation + depth bottleneck for the newest frame.

Layout mirrors the privileged teacher where it can (same action head, same
twin critic) so distillation compares like with like. The value target path
copies the whole feature stack, not just the critic heads: with a learned
encoder underneath, Polyak on the heads alone would bootstrap against
features that have already drifted.
"""

from __future__ import annotations

import numpy as np

from . import tasks
from .harness import PROPRIO_DIM, STACK, HighView
from .nn import core
from .nn.core import MLP, Adam, Conv1d, Linear, Module, Tensor
from .nn.heads import BernoulliHead, SquashedGaussian, SquashedGaussianHead
from .sim import params as P
from .sim.camera import N_CLASSES
from .teacher import TwinCritic

BYTE_EMB = 16
INSTR_EMB = 32
CH = 32                   # conv width everywhere in the visual stack
MAP_CH = N_CLASSES + 1    # one-hot segmentation + depth


def _softmax(logits: Tensor, axis: int) -> Tensor:
    shift = Tensor(-logits.data.max(axis=axis, keepdims=True))
    ez = core.exp(logits + shift)
    return ez / ez.sum(axis=axis, keepdims=True)


class InstructionEncoder(Module):
    """Byte-token embedding mean-pooled over the nonzero tokens, then a
    linear projection. Padding bytes never enter the pool; an all-padding
    string pools to the zero vector."""

    def __init__(self, rng: np.random.Generator):
        self.table = core.param(rng.normal(0.0, 0.02, size=(256, BYTE_EMB)))
        self.proj = Linear(BYTE_EMB, INSTR_EMB, rng)

    def __call__(self, tokens: np.ndarray) -> Tensor:
        tokens = np.asarray(tokens)
        emb = core.embedding(self.table, tokens)                  # (B, L, 16)
        mask = (tokens != 0).astype(np.float32)[..., None]
        pooled = (emb * Tensor(mask)).sum(axis=1)
        denom = np.maximum(mask.sum(axis=1), 1.0)
        return self.proj(pooled * Tensor(1.0 / denom))


class RayUNet(Module):
    """1-D encoder-decoder over the ray axis: 3 strided downs, 3 nearest-up
    + conv ups with skip connections, 32 channels throughout. The bottleneck
    is modulated by the instruction through a per-channel affine, which is
    what lets one network segment "the red cube" for one order and "the
    yellow cube" for another. Emits class logits and sigmoid depth for the
    newest frame."""

    def __init__(self, rng: np.random.Generator):
        self.stem = Conv1d(STACK, CH, 3, rng, pad=1)
        self.down = [Conv1d(CH, CH, 3, rng, stride=2, pad=1) for _ in range(3)]
        self.film = Linear(INSTR_EMB, 2 * CH, rng)
        self.up = [Conv1d(2 * CH, CH, 3, rng, pad=1) for _ in range(3)]
        self.seg = Conv1d(CH, N_CLASSES, 1, rng)
        self.depth = Conv1d(CH, 1, 1, rng)

    def __call__(self, rays: Tensor, instr: Tensor) -> tuple[Tensor, Tensor]:
        e0 = core.relu(self.stem(rays))                 # (B, 32, R)
        e1 = core.relu(self.down[0](e0))                # R/2
        e2 = core.relu(self.down[1](e1))                # R/4
        h = core.relu(self.down[2](e2))                 # R/8
        gb = self.film(instr)
        gamma = gb[:, :CH].reshape(-1, CH, 1)
        beta = gb[:, CH:].reshape(-1, CH, 1)
        h = h * (gamma + 1.0) + beta
        x = core.relu(self.up[0](core.concat([core.upsample2(h), e2], axis=1)))
        x = core.relu(self.up[1](core.concat([core.upsample2(x), e1], axis=1)))
        x = core.relu(self.up[2](core.concat([core.upsample2(x), e0], axis=1)))
        seg_logits = self.seg(x)                        # (B, 4, R)
        depth = core.sigmoid(self.depth(x))[:, 0]       # (B, R) in (0, 1)
        return seg_logits, depth


def hard_maps(seg_logits: Tensor, depth: Tensor) -> Tensor:
    """Policy-side view of the bottleneck, (B, 5, R): exact argmax one-hot
    segmentation stacked with depth. Straight-through: the forward value is
    the hard one-hot, the gradient flows through the class probabilities."""
    p = _softmax(seg_logits, axis=1)
    idx = seg_logits.data.argmax(axis=1)                          # (B, R)
    hard = np.moveaxis(np.eye(N_CLASSES, dtype=p.dtype)[idx], -1, 1)
    st = p + Tensor(hard - p.data)
    return core.concat([st, depth.reshape(depth.shape[0], 1, -1)], axis=1)


class PolicyEncoder(Module):
    """Two strided convs over the bottleneck maps, mean-pooled along rays,
    fused with flattened proprio and the instruction embedding by a
    two-layer MLP."""

    def __init__(self, rng: np.random.Generator, hidden: int):
        self.c1 = Conv1d(MAP_CH, CH, 3, rng, stride=2, pad=1)
        self.c2 = Conv1d(CH, CH, 3, rng, stride=2, pad=1)
        self.fuse = MLP([CH + STACK * PROPRIO_DIM + INSTR_EMB, hidden, hidden], rng)

    def __call__(self, maps: Tensor, proprio: Tensor, instr: Tensor) -> Tensor:
        x = core.relu(self.c1(maps))
        x = core.relu(self.c2(x)).mean(axis=2)
        return core.relu(self.fuse(core.concat([x, proprio, instr], axis=1)))


def stationary_label(reference_action: np.ndarray) -> np.ndarray:
    """True where the reference locomotion command is exactly zero. Exact
    comparison is deliberate: prior masking pins the reference mode to
    literal 0.0 on the base dims, so no epsilon is needed."""
    a = np.asarray(reference_action)
    return (a[..., tasks.LOCO_DIMS] == 0.0).all(axis=-1)


class StudentPolicy(Module):
    """Instruction encoder + ray U-Net + policy encoder + squashed-Gaussian
    action head, Bernoulli stationary head, and a twin critic on the shared
    policy features (actor and critic read the same encoder output).

    Optimizer split matches the update phases: the critic steps on TD error
    alone; the heads step on the actor loss; encoder and visual stack step
    once on the sum of everything routed through them.
    """

    kind = "student"

    def __init__(self, seed: int, hidden: int = 128, lr: float = 3e-4):
        rng = np.random.default_rng([seed, 71])
        self.seed = seed
        self.hidden = hidden
        self.instr = InstructionEncoder(rng)
        self.unet = RayUNet(rng)
        self.enc = PolicyEncoder(rng, hidden)
        self.head = SquashedGaussianHead(hidden, tasks.ACT_DIM,
                                         scale=tasks.ACT_SCALE,
                                         center=tasks.ACT_CENTER, rng=rng)
        self.stationary = BernoulliHead(hidden, rng)
        self.critic = TwinCritic(rng, hidden, hidden)
        self.t_instr = InstructionEncoder(rng)
        self.t_unet = RayUNet(rng)
        self.t_enc = PolicyEncoder(rng, hidden)
        self.t_critic = TwinCritic(rng, hidden, hidden)
        for online, target in self._pairs():
            target.load_state_dict(online.state_dict())
        repr_params = [p for _, p in self.instr.named_params()]
        repr_params += [p for _, p in self.unet.named_params()]
        self.opt_repr = Adam(repr_params, lr=lr)
        self.opt_enc = Adam([p for _, p in self.enc.named_params()], lr=lr)
        self.opt_actor = Adam([p for _, p in self.head.named_params()]
                              + [p for _, p in self.stationary.named_params()], lr=lr)
        self.opt_critic = Adam([p for _, p in self.critic.named_params()], lr=lr)

    def _pairs(self):
        return ((self.instr, self.t_instr), (self.unet, self.t_unet),
                (self.enc, self.t_enc), (self.critic, self.t_critic))

    def named_params(self, prefix: str = ""):
        # checkpoints carry the target copies too, so a resumed run
        # bootstraps against the same values it stopped with
        for name in ("instr", "unet", "enc", "head", "stationary", "critic",
                     "t_instr", "t_unet", "t_enc", "t_critic"):
            yield from getattr(self, name).named_params(prefix + name + ".")

    def sync_target(self, tau: float) -> None:
        for online, target in self._pairs():
            for (_, p), (_, t) in zip(online.named_params(), target.named_params()):
                t.data *= 1.0 - tau
                t.data += tau * p.data

    # -- forward paths ---------------------------------------------------

    def bottleneck(self, rays: Tensor, instr_emb: Tensor) -> tuple[Tensor, Tensor]:
        return self.unet(rays, instr_emb)

    def features(self, rays: Tensor, proprio: Tensor, tokens: np.ndarray):
        """Full deployment path. Returns (policy features, seg logits,
        depth, instruction embedding); gradients reach every stage."""
        emb = self.instr(tokens)
        seg_logits, depth = self.unet(rays, emb)
        h = self.enc(hard_maps(seg_logits, depth), proprio, emb)
        return h, seg_logits, depth, emb

    def target_features(self, rays: Tensor, proprio: Tensor, tokens: np.ndarray) -> Tensor:
        emb = self.t_instr(tokens)
        seg_logits, depth = self.t_unet(rays, emb)
        return self.t_enc(hard_maps(seg_logits, depth), proprio, emb)

    def dist(self, h: Tensor) -> SquashedGaussian:
        return self.head(h)

    # -- acting ----------------------------------------------------------

    def _obs_tensors(self, view: HighView):
        rays = Tensor(view.ray_stack()[None].astype(np.float32))
        prop = Tensor(view.proprio_stack.reshape(1, -1).astype(np.float32))
        tokens = view.instruction.tokens()[None]
        return rays, prop, tokens

    def act(self, view: HighView, rng: np.random.Generator | None = None) -> np.ndarray:
        """Deployment action. Reads rays, proprio, and instruction bytes
        only; a stationary draw of 1 overwrites the base command with
        (0, 0). Greedy when rng is None."""
        with core.no_grad():
            rays, prop, tokens = self._obs_tensors(view)
            h, _, _, _ = self.features(rays, prop, tokens)
            return self._act_from_h(h, rng)

    def act_from_maps(self, maps: np.ndarray, proprio: np.ndarray,
                      tokens: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        """Action from externally supplied bottleneck maps (B=1). Exists so
        tests can hold the maps fixed while perturbing raw rays: the result
        must not depend on anything but maps, proprio, and instruction."""
        with core.no_grad():
            emb = self.instr(np.asarray(tokens)[None])
            h = self.enc(Tensor(np.asarray(maps, dtype=np.float32)[None]),
                         Tensor(np.asarray(proprio, dtype=np.float32).reshape(1, -1)),
                         emb)
            return self._act_from_h(h, rng)

    def _act_from_h(self, h: Tensor, rng: np.random.Generator | None) -> np.ndarray:
        d = self.dist(h)
        logit = float(self.stationary(h).data[0, 0])
        if rng is None:
            action = d.mode()[0]
            stationary = logit > 0.0
        else:
            action = d.sample_np(rng)[0]
            stationary = rng.uniform() < 1.0 / (1.0 + np.exp(-logit))
        if stationary:
            action = action.copy()
            action[tasks.LOCO_DIMS] = 0.0
        return action

    def meta(self) -> dict:
        return {"kind": self.kind, "hidden": self.hidden, "seed": self.seed}


def save_student(path, student: StudentPolicy, extra_meta: dict | None = None) -> None:
    from .nn import checkpoint
    checkpoint.save(path, student.state_dict(),
                    {**student.meta(), **(extra_meta or {})})


def load_student(path) -> StudentPolicy:
    from .nn import checkpoint
    tensors, meta = checkpoint.load(path)
    student = StudentPolicy(int(meta.get("seed", 0)),
                            hidden=int(meta.get("hidden", 128)))
    student.load_state_dict(tensors)
    return student
