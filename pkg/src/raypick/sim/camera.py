"""1-D ray camera at the gripper: raw appearance strip plus ground-truth
segmentation and depth channels. Ground truth is rendered from canonical
angles with no noise; only the raw appearance channel carries augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import _kernels
from . import params as P
from .world import Binding, Snapshot, WorldState, visible_range

# segmentation classes
CLS_BG = 0
CLS_TARGET_CUBE = 1
CLS_TARGET_BASKET = 2
CLS_OTHER = 3
N_CLASSES = 4

_REL_ANGLES = np.linspace(-P.FOV / 2.0, P.FOV / 2.0, P.N_RAYS)


@dataclass
class RayFrame:
    t: float
    appearance: np.ndarray   # (N_RAYS,) float32, augmented
    seg: np.ndarray          # (N_RAYS,) uint8 ground truth
    depth: np.ndarray        # (N_RAYS,) float32 ground truth, / MAX_RANGE


def seg_class(obj_kind: str, idx: int, binding: Binding) -> int:
    if idx == binding.target_cube:
        return CLS_TARGET_CUBE
    if idx == binding.target_basket:
        return CLS_TARGET_BASKET
    if obj_kind in ("cube", "basket"):
        return CLS_OTHER
    return CLS_BG


def render_frame(state: WorldState, binding: Binding, rng: np.random.Generator,
                 noise: bool = True, snap: Snapshot | None = None) -> RayFrame:
    if snap is None:
        snap = state.snap()
    gx, gy, gh = snap.gripper
    cam = snap.base[2] + state.draws.mount_dyaw
    rng_lim = visible_range(gh)

    n = len(state.objects)
    if n == 0:
        depth = np.full(P.N_RAYS, 1.0, dtype=np.float32)
        seg = np.full(P.N_RAYS, CLS_BG, dtype=np.uint8)
        if noise:
            raw = _augment(rng.uniform(0.0, 1.0, size=P.N_RAYS), rng)
        else:
            raw = np.full(P.N_RAYS, 0.5)
        return RayFrame(snap.t, np.clip(raw, 0.0, 1.0).astype(np.float32), seg, depth)
    cx = snap.obj_xy[:, 0]
    cy = snap.obj_xy[:, 1]
    cr = np.array([o.radius for o in state.objects])
    cls = np.array([seg_class(o.kind, i, binding) for i, o in enumerate(state.objects)],
                   dtype=np.uint8)

    # ground truth from canonical angles, held object excluded
    angles = cam + _REL_ANGLES
    dist, idx = _kernels.ray_march(gx, gy, angles, cx, cy, cr,
                                   skip=snap.held, max_dist=P.MAX_RANGE)
    beyond = dist > rng_lim
    idx = np.where(beyond, -1, idx)
    dist = np.where(idx < 0, P.MAX_RANGE, dist)
    seg = np.where(idx >= 0, cls[np.clip(idx, 0, n - 1)], CLS_BG).astype(np.uint8)
    depth = (dist / P.MAX_RANGE).astype(np.float32)

    # raw appearance: jittered fan, object appearance or background texture
    if noise:
        jitter = rng.uniform(-P.FAN_JITTER, P.FAN_JITTER)
        rdist, ridx = _kernels.ray_march(gx, gy, angles + jitter, cx, cy, cr,
                                         skip=snap.held, max_dist=P.MAX_RANGE)
        ridx = np.where(rdist > rng_lim, -1, ridx)
        app = np.array([o.appearance for o in state.objects], dtype=np.float64)
        raw = np.where(ridx >= 0, app[np.clip(ridx, 0, n - 1)], 0.0)
        bg = rng.uniform(0.0, 1.0, size=P.N_RAYS)
        raw = np.where(ridx >= 0, raw, bg)
        raw = _augment(raw, rng)
    else:
        app = np.array([o.appearance for o in state.objects], dtype=np.float64)
        raw = np.where(idx >= 0, app[np.clip(idx, 0, n - 1)], 0.5)
    return RayFrame(snap.t, np.clip(raw, 0.0, 1.0).astype(np.float32), seg, depth)


def _augment(raw: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One per-frame pixel transform, chosen uniformly."""
    kind = rng.integers(0, 4)
    if kind == 0:    # additive gaussian
        return raw + rng.normal(0.0, 0.05, size=raw.shape)
    if kind == 1:    # salt and pepper
        mask = rng.uniform(size=raw.shape) < 0.05
        salt = (rng.uniform(size=raw.shape) < 0.5).astype(np.float64)
        return np.where(mask, salt, raw)
    if kind == 2:    # brightness shift
        return raw + rng.uniform(-0.1, 0.1)
    # box blur over adjacent rays
    padded = np.concatenate([raw[:1], raw, raw[-1:]])
    return (padded[:-2] + padded[1:-1] + padded[2:]) / 3.0


def gt_maps(frame: RayFrame) -> tuple[np.ndarray, np.ndarray]:
    return frame.seg.copy(), frame.depth.copy()
