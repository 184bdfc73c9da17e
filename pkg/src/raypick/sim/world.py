"""2.5D world: unicycle base, two-joint arm in the heading plane, parallel
gripper, cylindrical objects. Pure state progression, all randomness through
the state's own Generator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import params as P


@dataclass
class TaskObject:
    kind: str              # "cube" | "basket" | "distractor"
    color_id: int          # 0..3, -1 for distractors
    radius: float
    x: float
    y: float
    height: float          # current top height
    appearance: float
    in_basket: int = -1    # index of the basket this cube rests in


@dataclass
class RandomDraws:
    """Per-episode domain randomization draws."""
    actuator_gain: float = 1.0
    drag_scale: float = 1.0
    mass_scale: float = 1.0
    arm_noise_mag: float = 0.0
    mount_dx: float = 0.0
    mount_dy: float = 0.0
    mount_dz: float = 0.0
    mount_dyaw: float = 0.0
    sensor_delay_mean: float = 0.0
    appearance_offset: float = 0.0


@dataclass
class Binding:
    """Instruction resolved against the scene: object indices."""
    target_cube: int
    target_basket: int


class Snapshot(NamedTuple):
    t: float
    base: np.ndarray       # x, y, yaw, v, w
    arm_q: np.ndarray
    grip: float
    held: int
    gripper: np.ndarray    # gx, gy, gh
    obj_xy: np.ndarray     # (n, 2)
    obj_h: np.ndarray
    in_basket: np.ndarray


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


class WorldState:
    def __init__(self, objects: list[TaskObject], rng: np.random.Generator,
                 draws: RandomDraws | None = None, yaw: float = 0.0):
        self.objects = objects
        self.rng = rng
        self.draws = draws or RandomDraws()
        self.x = 0.0
        self.y = 0.0
        self.yaw = yaw
        self.v = 0.0
        self.w = 0.0
        self.arm_q = P.Q_NEUTRAL.copy()
        self.grip = 0.0
        self.grip_target = 0.0
        self.held = -1
        self.t = 0.0
        self.steps = 0
        self.out_of_bounds = False
        self.arm_noise_offset = np.zeros(2)

    # -- kinematics ------------------------------------------------------

    def planar_reach(self) -> float:
        q1, q2 = self.arm_q
        return P.L1 * math.cos(q1) + P.L2 * math.cos(q1 + q2)

    def gripper_height(self) -> float:
        q1, q2 = self.arm_q
        return P.MOUNT_H + self.draws.mount_dz + P.L1 * math.sin(q1) + P.L2 * math.sin(q1 + q2)

    def cam_heading(self) -> float:
        return self.yaw + self.draws.mount_dyaw

    def gripper_pose(self) -> tuple[float, float, float]:
        d = self.planar_reach()
        cy_, sy_ = math.cos(self.yaw), math.sin(self.yaw)
        mx = self.x + self.draws.mount_dx * cy_ - self.draws.mount_dy * sy_
        my = self.y + self.draws.mount_dx * sy_ + self.draws.mount_dy * cy_
        h = self.cam_heading()
        return mx + d * math.cos(h), my + d * math.sin(h), self.gripper_height()

    def finger_tips(self) -> tuple[np.ndarray, np.ndarray]:
        gx, gy, _ = self.gripper_pose()
        span = P.FINGER_HALFSPAN * (1.0 - self.grip)
        h = self.cam_heading()
        px, py = -math.sin(h), math.cos(h)
        left = np.array([gx + span * px, gy + span * py])
        right = np.array([gx - span * px, gy - span * py])
        return left, right

    def snap(self) -> Snapshot:
        gx, gy, gh = self.gripper_pose()
        n = len(self.objects)
        obj_xy = np.empty((n, 2))
        obj_h = np.empty(n)
        in_b = np.empty(n, dtype=np.int64)
        for i, o in enumerate(self.objects):
            obj_xy[i, 0] = o.x
            obj_xy[i, 1] = o.y
            obj_h[i] = o.height
            in_b[i] = o.in_basket
        return Snapshot(self.t, np.array([self.x, self.y, self.yaw, self.v, self.w]),
                        self.arm_q.copy(), self.grip, self.held,
                        np.array([gx, gy, gh]), obj_xy, obj_h, in_b)

    # -- helpers -----------------------------------------------------------

    def horiz_dist_to_base(self, idx: int) -> float:
        o = self.objects[idx]
        return math.hypot(o.x - self.x, o.y - self.y)

    def basket_at(self, x: float, y: float) -> int:
        for i, o in enumerate(self.objects):
            if o.kind == "basket" and math.hypot(o.x - x, o.y - y) <= o.radius:
                return i
        return -1


def visible_range(gripper_h: float) -> float:
    return min(P.VANTAGE_BASE + P.VANTAGE_GAIN * max(gripper_h, 0.0), P.MAX_RANGE)


def object_visible(state: WorldState, idx: int, snap: Snapshot | None = None) -> bool:
    """FOV + vantage-range rule, occlusion-free. A held object is visible by
    definition (it sits at the camera origin)."""
    if snap is None:
        snap = state.snap()
    if idx == snap.held:
        return True
    gx, gy, gh = snap.gripper
    o = state.objects[idx]
    ox, oy = snap.obj_xy[idx]
    r = o.radius
    d = math.hypot(ox - gx, oy - gy)
    if d <= r:
        return True
    if d - r > visible_range(gh):
        return False
    cam = snap.base[2] + state.draws.mount_dyaw
    bearing = wrap_angle(math.atan2(oy - gy, ox - gx) - cam)
    halfw = math.asin(min(r / d, 1.0))
    return abs(bearing) <= P.FOV / 2.0 + halfw


def step_world(state: WorldState, force: float, torque: float,
               arm_delta: np.ndarray, grip_target: float, dt: float = P.DT_LOW) -> None:
    """One low-rate physics step. Consumers clamp: force/torque saturate at
    actuator limits, arm deltas at +-ARM_DELTA_MAX per call."""
    d = state.draws
    force = min(max(force, -P.F_MAX), P.F_MAX)
    torque = min(max(torque, -P.TAU_MAX), P.TAU_MAX)

    # payload disturbance: arm extension shifts effective inertia a little
    ext = state.planar_reach() / (P.L1 + P.L2)
    m_eff = P.BASE_MASS * d.mass_scale * (1.0 + 0.05 * ext)
    i_eff = P.BASE_INERTIA * d.mass_scale * (1.0 + 0.05 * ext)

    state.v += dt * (d.actuator_gain * force / m_eff - P.LIN_DRAG * d.drag_scale * state.v)
    state.w += dt * (d.actuator_gain * torque / i_eff - P.ANG_DRAG * d.drag_scale * state.w)
    state.yaw = wrap_angle(state.yaw + dt * state.w)

    nx = state.x + dt * state.v * math.cos(state.yaw)
    ny = state.y + dt * state.v * math.sin(state.yaw)
    # push-out against everything except the held object (tangential slide)
    for _ in range(3):
        bumped = False
        for i, o in enumerate(state.objects):
            if i == state.held:
                continue
            ddx, ddy = nx - o.x, ny - o.y
            dist = math.hypot(ddx, ddy)
            min_d = P.BASE_RADIUS + o.radius
            if dist < min_d:
                if dist < 1e-9:
                    ddx, ddy, dist = 1.0, 0.0, 1.0
                nx = o.x + ddx / dist * min_d
                ny = o.y + ddy / dist * min_d
                bumped = True
        if not bumped:
            break
    state.x, state.y = nx, ny
    if abs(nx) > P.ARENA_HALF or abs(ny) > P.ARENA_HALF:
        state.out_of_bounds = True

    # arm
    delta = np.clip(np.asarray(arm_delta, dtype=np.float64), -P.ARM_DELTA_MAX, P.ARM_DELTA_MAX)
    state.arm_q = np.clip(state.arm_q + delta, P.Q_LO, P.Q_HI)

    # gripper
    grip_target = min(max(float(grip_target), 0.0), 1.0)
    state.grip_target = grip_target
    g_prev = state.grip
    move = np.clip(grip_target - g_prev, -P.GRIP_RATE * dt, P.GRIP_RATE * dt)
    g_new = g_prev + move
    if state.held >= 0:
        g_new = min(g_new, P.GRIP_HOLD_STALL)
    state.grip = g_new

    gx, gy, gh = state.gripper_pose()

    if state.held >= 0 and g_new < P.DETACH_G:
        cube = state.objects[state.held]
        cube.x, cube.y = gx, gy
        cube.height = P.CUBE_HEIGHT
        cube.in_basket = state.basket_at(gx, gy)
        state.held = -1
    elif state.held < 0 and g_new > g_prev and g_new >= P.ATTACH_G:
        # attach requires active closure at or above the threshold; a
        # saturated grip held closed never picks anything up
        best, best_d = -1, P.GRASP_RADIUS
        for i, o in enumerate(state.objects):
            if o.kind != "cube":
                continue
            dist = math.hypot(o.x - gx, o.y - gy)
            if dist <= best_d and gh <= o.height + P.GRASP_HEIGHT_MARGIN:
                best, best_d = i, dist
        if best >= 0:
            state.held = best
            state.objects[best].in_basket = -1

    if state.held >= 0:
        cube = state.objects[state.held]
        cube.x, cube.y = gx, gy
        cube.height = max(gh, 0.01)

    state.t += dt
    state.steps += 1


def perturb_object(state: WorldState, idx: int, rng: np.random.Generator) -> bool:
    """Teleport an unheld object within a disc, rejecting base-footprint hits.
    Up to OBJ_PERTURB_TRIES; returns False if every candidate was rejected."""
    o = state.objects[idx]
    if idx == state.held:
        return False
    for _ in range(P.OBJ_PERTURB_TRIES):
        ang = rng.uniform(0.0, 2.0 * math.pi)
        rad = P.OBJ_PERTURB_RADIUS * math.sqrt(rng.uniform())
        cx = o.x + rad * math.cos(ang)
        cy = o.y + rad * math.sin(ang)
        lim = P.ARENA_HALF - 0.2
        cx = min(max(cx, -lim), lim)
        cy = min(max(cy, -lim), lim)
        if math.hypot(cx - state.x, cy - state.y) < P.BASE_RADIUS + o.radius + 0.02:
            continue
        o.x, o.y = cx, cy
        if o.kind == "cube" and o.in_basket >= 0:
            o.in_basket = state.basket_at(cx, cy)
        return True
    return False


def apply_arm_noise(state: WorldState, rng: np.random.Generator) -> np.ndarray:
    """Resample the held joint offset (target-noise analog); the offset delta
    lands on the arm as a one-time kick. Returns the new offset."""
    mag = state.draws.arm_noise_mag
    new = rng.uniform(-mag, mag, size=2)
    kick = new - state.arm_noise_offset
    state.arm_q = np.clip(state.arm_q + kick, P.Q_LO, P.Q_HI)
    state.arm_noise_offset = new
    return new


# -- privileged features -------------------------------------------------

PRIV_Q = 12   # per-object feature width
PRIV_M = 6    # object slots, zero padded


def priv_slot_order(state: WorldState, binding: Binding) -> list[int]:
    """Binding-resolved slots: target cube, target basket, remaining task
    objects by index. Distractors never appear."""
    rest = [i for i, o in enumerate(state.objects)
            if o.kind in ("cube", "basket") and i not in (binding.target_cube, binding.target_basket)]
    return [binding.target_cube, binding.target_basket] + rest


def privileged_features(state: WorldState, binding: Binding,
                        snap: Snapshot | None = None) -> np.ndarray:
    """(PRIV_M, PRIV_Q) float32. A slot is all-zero unless its object is
    visible under the same FOV/range rule the camera uses (occlusion-free)."""
    if snap is None:
        snap = state.snap()
    out = np.zeros((PRIV_M, PRIV_Q), dtype=np.float32)
    bx, by, byaw = snap.base[0], snap.base[1], snap.base[2]
    cy_, sy_ = math.cos(-byaw), math.sin(-byaw)
    for slot, idx in enumerate(priv_slot_order(state, binding)[:PRIV_M]):
        if not object_visible(state, idx, snap=snap):
            continue
        o = state.objects[idx]
        ox, oy = snap.obj_xy[idx]
        rx, ry = ox - bx, oy - by
        relx = rx * cy_ - ry * sy_
        rely = rx * sy_ + ry * cy_
        row = out[slot]
        row[0] = 1.0
        row[1] = relx / 3.0
        row[2] = rely / 3.0
        row[3] = snap.obj_h[idx] / 0.5
        row[4] = 1.0 if o.kind == "cube" else 0.0
        row[5] = 1.0 if o.kind == "basket" else 0.0
        if o.color_id >= 0:
            row[6 + o.color_id] = 1.0
        row[10] = 1.0 if idx == snap.held else 0.0
        row[11] = o.appearance
    return out
