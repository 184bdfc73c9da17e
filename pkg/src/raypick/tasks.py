"""Task machine: instruction grounding, scene generation, the 7-stage subtask
chain, per-stage rewards, and behavior prior masks.

Stages: 1 search, 2 move-to, 3 grasp, 4 search-with-object,
5 move-to-with-object, 6 gripper-over-basket, 7 drop-into.
The chain is recomputed every step: the current stage is the first whose
predicate is unmet. A drop after stage 3 regresses the reward latches for
stages 3..7 (re-grasp behavior).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .sim import params as P
from .sim.world import (Binding, RandomDraws, Snapshot, TaskObject, WorldState,
                        object_visible, wrap_angle)

TOKEN_LEN = 100
VOCAB = 128   # raw bytes

# reward weights
W_DIST = 1.0
W_RETRACT = 0.5
W_ALIGN = 0.5
KEEP_GRASP_PENALTY = -0.1
STAGE_BONUS = 1.0
SUCCESS_BONUS = 1.0
FAILURE_PENALTY = -1.0

N_STAGES = 7
LIFT_STEPS = 2   # high-level steps the cube must stay lifted

# high-level action layout: (arm dq1, arm dq2, grip target, v, w)
ACT_DIM = 5
ACT_SCALE = np.array([P.ARM_DELTA_MAX, P.ARM_DELTA_MAX, 0.5, 1.2, 1.0], dtype=np.float32)
ACT_CENTER = np.array([0.0, 0.0, 0.5, 0.0, 0.0], dtype=np.float32)
LOCO_DIMS = np.array([False, False, False, True, True])

_MASK_NONE = np.zeros(ACT_DIM, dtype=bool)
_MASK_STATIONARY = np.array([False, False, False, True, True])
_MASK_ROTATIONAL = np.array([False, False, False, True, False])


def prior_mask(stage: int) -> np.ndarray:
    """Behavior prior for a stage: which action dims have their pre-squash
    mean hard-zeroed (mode exactly 0) with dispersion pinned to sigma_prior."""
    if stage in (3, 6, 7):
        return _MASK_STATIONARY
    if stage in (1, 4):
        return _MASK_ROTATIONAL
    return _MASK_NONE


def stationary_stage(stage: int) -> bool:
    return stage in (3, 6, 7)


SUBTASK_NAMES = ("Search", "MoveTo", "Grasp", "SearchWithObj",
                 "MoveToWithObj", "MoveGripperToWithObj", "DropInto")


def subtask_name(stage: int) -> str:
    return SUBTASK_NAMES[stage - 1] if 1 <= stage <= 7 else f"stage{stage}"


# -- instructions --------------------------------------------------------


@dataclass(frozen=True)
class Instruction:
    cube_color: int
    basket_color: int

    @property
    def text(self) -> str:
        return (f"drop the {P.COLOR_NAMES[self.cube_color]} cube "
                f"into the {P.COLOR_NAMES[self.basket_color]} basket")

    def tokens(self) -> np.ndarray:
        raw = self.text.encode("ascii")[:TOKEN_LEN]
        out = np.zeros(TOKEN_LEN, dtype=np.uint8)
        out[:len(raw)] = np.frombuffer(raw, dtype=np.uint8)
        return out


# -- regimes ---------------------------------------------------------------


@dataclass(frozen=True)
class Regime:
    """Environment distribution knobs. `train` is the reference; eval
    protocols and ablations are declared variations."""
    name: str
    corner_jitter: float = 0.5
    distractor_max: int = P.DISTRACTOR_MAX
    band_shift: float = 0.0
    dynamics_edges: bool = False
    arm_noise_mag: float = P.ARM_NOISE_MAG
    mount_on: bool = True
    visual_noise: bool = True
    distractors: bool = True
    obj_perturb: bool = True


TRAIN = Regime("train")
TRAIN_NO_PERTURB = Regime("train-no-perturbation", arm_noise_mag=0.0, mount_on=False,
                          obj_perturb=False)
TRAIN_NO_VISUAL = Regime("train-no-visual-aug", visual_noise=False, distractors=False)
EVAL_SCRIPTED = Regime("eval-scripted", arm_noise_mag=0.0, mount_on=False,
                       obj_perturb=False, distractors=False)
EVAL_CLUTTERED = Regime("eval-cluttered", arm_noise_mag=0.0, mount_on=False,
                        obj_perturb=False)
DEPLOY_SHIFT = Regime("deployment-shift", band_shift=0.05, dynamics_edges=True,
                      distractor_max=int(P.DISTRACTOR_MAX * 1.5), obj_perturb=False)

REGIMES = {r.name: r for r in (TRAIN, TRAIN_NO_PERTURB, TRAIN_NO_VISUAL,
                               EVAL_SCRIPTED, EVAL_CLUTTERED, DEPLOY_SHIFT)}


def draw_dynamics(rng: np.random.Generator, regime: Regime) -> RandomDraws:
    def draw(lo, hi):
        if regime.dynamics_edges:
            return float(rng.choice([lo, hi]))
        return float(rng.uniform(lo, hi))

    mscale = 1.0 if regime.mount_on else 0.0
    if regime.dynamics_edges and regime.mount_on:
        mount = [float(rng.choice([-1.0, 1.0])) for _ in range(4)]
        mdx, mdy, mdz = (m * P.MOUNT_XYZ for m in mount[:3])
        mdyaw = mount[3] * P.MOUNT_YAW
    else:
        mdx, mdy, mdz = (float(rng.uniform(-P.MOUNT_XYZ, P.MOUNT_XYZ)) * mscale
                         for _ in range(3))
        mdyaw = float(rng.uniform(-P.MOUNT_YAW, P.MOUNT_YAW)) * mscale
    return RandomDraws(
        actuator_gain=draw(*P.GAIN_RANGE),
        drag_scale=draw(*P.DRAG_RANGE),
        mass_scale=draw(*P.MASS_RANGE),
        arm_noise_mag=regime.arm_noise_mag,
        mount_dx=mdx, mount_dy=mdy, mount_dz=mdz, mount_dyaw=mdyaw,
        sensor_delay_mean=draw(*P.SENSOR_DELAY_RANGE),
        appearance_offset=float(rng.uniform(-P.BAND_OFFSET_MAG, P.BAND_OFFSET_MAG))
        + regime.band_shift,
    )


def _appearance(color_id: int, offset: float, rng: np.random.Generator) -> float:
    a = P.BAND_CENTERS[color_id] + offset + rng.uniform(-P.BAND_HALF, P.BAND_HALF)
    return float(np.clip(a, 0.0, 1.0))


def _add_distractors(objects: list[TaskObject], rng: np.random.Generator,
                     regime: Regime) -> None:
    if not regime.distractors:
        return
    count = int(rng.integers(0, regime.distractor_max + 1))
    task_xy = [(o.x, o.y) for o in objects]
    for _ in range(count):
        for _try in range(50):
            x = rng.uniform(-P.ARENA_HALF + 0.3, P.ARENA_HALF - 0.3)
            y = rng.uniform(-P.ARENA_HALF + 0.3, P.ARENA_HALF - 0.3)
            r = rng.uniform(*P.DISTRACTOR_RADIUS)
            if math.hypot(x, y) < P.DISTRACTOR_SPAWN_CLEAR + r:
                continue
            if any(math.hypot(x - tx, y - ty) < P.DISTRACTOR_CLEARANCE + r
                   for tx, ty in task_xy):
                continue
            objects.append(TaskObject("distractor", -1, r, x, y, 0.1,
                                      float(rng.uniform())))
            break


def _finish_scene(objects, cube_colors, basket_colors, target_cube_color,
                  target_basket_color, rng, regime):
    draws = draw_dynamics(rng, regime)
    for o in objects:
        o.appearance = _appearance(o.color_id, draws.appearance_offset, rng)
    _add_distractors(objects, rng, regime)
    state = WorldState(objects, rng, draws, yaw=float(rng.uniform(-math.pi, math.pi)))
    tc = next(i for i, o in enumerate(objects)
              if o.kind == "cube" and o.color_id == target_cube_color)
    tb = next(i for i, o in enumerate(objects)
              if o.kind == "basket" and o.color_id == target_basket_color)
    instr = Instruction(target_cube_color, target_basket_color)
    return state, instr, Binding(tc, tb)


_CORNERS = {"TL": (-1.0, 1.0), "TR": (1.0, 1.0), "BL": (-1.0, -1.0), "BR": (1.0, -1.0)}


def generate_scene(rng: np.random.Generator, regime: Regime = TRAIN):
    """Training distribution: two cubes + two baskets on jittered corners of a
    2 m square, random target pair."""
    cube_colors = rng.choice(4, size=2, replace=False).tolist()
    basket_colors = rng.choice(4, size=2, replace=False).tolist()
    corners = list(_CORNERS.values())
    rng.shuffle(corners)
    objects = []
    j = regime.corner_jitter
    for colors, kind, radius, height in ((cube_colors, "cube", P.CUBE_RADIUS, P.CUBE_HEIGHT),
                                         (basket_colors, "basket", P.BASKET_RADIUS, P.BASKET_RIM)):
        for c in colors:
            cx, cy = corners.pop()
            objects.append(TaskObject(kind, int(c), radius,
                                      cx + rng.uniform(-j, j), cy + rng.uniform(-j, j),
                                      height, 0.0))
    return _finish_scene(objects, cube_colors, basket_colors,
                         int(rng.choice(cube_colors)), int(rng.choice(basket_colors)),
                         rng, regime)


_LETTER = {"r": 0, "g": 1, "b": 2, "y": 3}


def scene_from_script_row(row: dict, rng: np.random.Generator,
                          regime: Regime = EVAL_SCRIPTED):
    """Scripted evaluation row: exact corner placement, fixed instruction.
    Lowercase letters are cubes, uppercase baskets."""
    objects = []
    cube_colors, basket_colors = [], []
    for corner, letter in row["corners"].items():
        color = _LETTER[letter.lower()]
        x, y = _CORNERS[corner]
        if letter.islower():
            objects.append(TaskObject("cube", color, P.CUBE_RADIUS, x, y, P.CUBE_HEIGHT, 0.0))
            cube_colors.append(color)
        else:
            objects.append(TaskObject("basket", color, P.BASKET_RADIUS, x, y, P.BASKET_RIM, 0.0))
            basket_colors.append(color)
    state, instr, binding = _finish_scene(
        objects, cube_colors, basket_colors,
        _LETTER[row["instruction"]["cube"].lower()],
        _LETTER[row["instruction"]["basket"].lower()], rng, regime)
    state.yaw = math.pi / 2.0   # sheet fixes the start facing the top edge
    return state, instr, binding


def generate_cluttered_scene(rng: np.random.Generator, regime: Regime = EVAL_CLUTTERED):
    """Two near groups fore and aft of the robot, objects 0.28 m apart within
    a group. The target cube shares its group with the non-target basket so a
    full run must visit both groups."""
    cube_colors = rng.choice(4, size=2, replace=False).tolist()
    basket_colors = rng.choice(4, size=2, replace=False).tolist()
    side = 1.0 if rng.uniform() < 0.5 else -1.0
    jit = lambda: rng.uniform(-0.1, 0.1)
    objects = [
        TaskObject("cube", cube_colors[0], P.CUBE_RADIUS,
                   side * 0.9 + jit(), 0.28 + jit(), P.CUBE_HEIGHT, 0.0),
        TaskObject("cube", cube_colors[1], P.CUBE_RADIUS,
                   -side * 0.9 + jit(), 0.28 + jit(), P.CUBE_HEIGHT, 0.0),
        TaskObject("basket", basket_colors[0], P.BASKET_RADIUS,
                   -side * 0.9 + jit(), -0.28 + jit(), P.BASKET_RIM, 0.0),
        TaskObject("basket", basket_colors[1], P.BASKET_RADIUS,
                   side * 0.9 + jit(), -0.28 + jit(), P.BASKET_RIM, 0.0),
    ]
    return _finish_scene(objects, cube_colors, basket_colors,
                         cube_colors[0], basket_colors[0], rng, regime)


# -- subtask chain -------------------------------------------------------


def _holds_target(state: WorldState, binding: Binding) -> bool:
    return state.held == binding.target_cube


def compute_subtask(state: WorldState, binding: Binding, lift_counter: int = 0,
                    grasp_latched: bool = False) -> tuple[int, bool]:
    """First unmet stage in 1..7 plus the terminal-success flag. Success
    short-circuits the chain: cube resting inside the target basket."""
    cube = state.objects[binding.target_cube]
    held = _holds_target(state, binding)
    if not held and cube.in_basket == binding.target_basket:
        return 7, True
    if not object_visible(state, binding.target_cube):
        return 1, False
    if not held and state.horiz_dist_to_base(binding.target_cube) > P.REACH_RADIUS:
        return 2, False
    if not (held and (lift_counter >= LIFT_STEPS or grasp_latched)):
        return 3, False
    if not object_visible(state, binding.target_basket):
        return 4, False
    if state.horiz_dist_to_base(binding.target_basket) > P.REACH_RADIUS:
        return 5, False
    gx, gy, gh = state.gripper_pose()
    basket = state.objects[binding.target_basket]
    over = math.hypot(gx - basket.x, gy - basket.y) <= P.BASKET_RADIUS
    clear = gh >= P.BASKET_RIM + P.PLACE_HEIGHT_MARGIN
    if not (over and clear):
        return 6, False
    return 7, False


def _align_cos(snap: Snapshot, cube_xy: np.ndarray, mount_dyaw: float) -> float:
    """Cosine between the two finger-tip -> cube vectors, fingers taken at the
    fully open span; -1 when the cube is centred between them. The open span
    is used no matter the commanded closure: fingers meet no contact in this
    model, so a grip-scaled span would flip the cosine to +1 on every close
    and fine the one move the stage exists to teach."""
    gx, gy, _ = snap.gripper
    cam = snap.base[2] + mount_dyaw
    span = P.FINGER_HALFSPAN
    px, py = -math.sin(cam), math.cos(cam)
    va = np.array([cube_xy[0] - (gx + span * px), cube_xy[1] - (gy + span * py)])
    vb = np.array([cube_xy[0] - (gx - span * px), cube_xy[1] - (gy - span * py)])
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na < 1e-9 or nb < 1e-9:
        return 0.0
    return float(va @ vb / (na * nb))


def _focal_distance(snap: Snapshot, stage: int, binding: Binding) -> float | None:
    bx, by = snap.base[0], snap.base[1]
    cube_xy = snap.obj_xy[binding.target_cube]
    basket_xy = snap.obj_xy[binding.target_basket]
    gx, gy, gh = snap.gripper
    if stage == 2:
        return math.hypot(cube_xy[0] - bx, cube_xy[1] - by)
    if stage == 3:
        ch = snap.obj_h[binding.target_cube]
        return math.sqrt((cube_xy[0] - gx) ** 2 + (cube_xy[1] - gy) ** 2 + (ch - gh) ** 2)
    if stage == 5:
        return math.hypot(basket_xy[0] - bx, basket_xy[1] - by)
    if stage == 6:
        hover = P.BASKET_RIM + P.RIM_HOVER
        return math.sqrt((basket_xy[0] - gx) ** 2 + (basket_xy[1] - gy) ** 2
                         + (hover - gh) ** 2)
    if stage == 7:
        return math.hypot(cube_xy[0] - basket_xy[0], cube_xy[1] - basket_xy[1])
    return None


class TaskTracker:
    """Per-episode task state: reward latches, metric latches, lift counter,
    terminal flags. advance() is called once per low step, after step_world."""

    def __init__(self, state: WorldState, binding: Binding,
                 w_retract: float = W_RETRACT):
        self.binding = binding
        self.w_retract = float(w_retract)   # 0 for the no-arm-retract ablation
        self.achieved = np.zeros(N_STAGES, dtype=bool)   # reward latches
        self.ever = np.zeros(N_STAGES, dtype=bool)       # metric latches
        self.lift_counter = 0
        self.success = False
        self.failure = False
        self.stage, _ = compute_subtask(state, binding)
        # stages the scene satisfies at spawn are not earned: latch silently
        self.achieved[:self.stage - 1] = True
        self.ever[:self.stage - 1] = True

    def on_high_tick(self, state: WorldState) -> None:
        gh = state.gripper_pose()[2]
        if _holds_target(state, self.binding) and gh >= P.LIFT_HEIGHT:
            self.lift_counter += 1
        else:
            self.lift_counter = 0

    def step_reward(self, prev: Snapshot, state: WorldState, k_prev: int) -> float:
        """Reward for the low step that moved `prev` to `state`, attributed to
        the stage that was active when the step began."""
        b = self.binding
        r = 0.0

        # shaping for the active stage
        d_prev = _focal_distance(prev, k_prev, b)
        if d_prev is not None:
            d_now = _focal_distance(state.snap(), k_prev, b)
            r += W_DIST * (d_prev - d_now)
        if k_prev in (4, 5):
            r += self.w_retract * (np.linalg.norm(prev.arm_q - P.Q_NEUTRAL)
                                   - np.linalg.norm(state.arm_q - P.Q_NEUTRAL))
        if k_prev == 3:
            c_prev = _align_cos(prev, prev.obj_xy[b.target_cube], state.draws.mount_dyaw)
            c_now = _align_cos(state.snap(), np.array([state.objects[b.target_cube].x,
                                                       state.objects[b.target_cube].y]),
                               state.draws.mount_dyaw)
            r += W_ALIGN * (c_prev - c_now)

        was_held = prev.held == b.target_cube
        now_held = _holds_target(state, b)
        k_now, success = compute_subtask(state, b, self.lift_counter, self.achieved[2])

        if success:
            self.success = True
            for i in range(N_STAGES):
                if not self.achieved[i]:
                    self.achieved[i] = True
                    r += STAGE_BONUS
            self.ever[:] = True
            r += SUCCESS_BONUS
        else:
            if was_held and not now_held and self.achieved[2]:
                # dropped (not into the target basket): regress stages 3..7
                self.achieved[2:] = False
                self.lift_counter = 0
                if k_prev in (5, 6):
                    r += KEEP_GRASP_PENALTY
                k_now, _ = compute_subtask(state, b, self.lift_counter, False)
            for i in range(k_now - 1):
                if not self.achieved[i]:
                    self.achieved[i] = True
                    self.ever[i] = True
                    r += STAGE_BONUS

        if state.out_of_bounds and not self.success:
            self.failure = True
            r += FAILURE_PENALTY

        self.stage = k_now
        return r

    @property
    def done(self) -> bool:
        return self.success or self.failure
