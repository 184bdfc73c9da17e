"""Physical constants of the desk-scale world. These are part of the artifact
contract; run-level knobs live in raypick.config instead."""

import numpy as np

DT_LOW = 0.02            # low-level control period, 50 Hz
HIGH_EVERY = 5           # low ticks per high-level decision, 10 Hz
ARENA_HALF = 3.0         # 6 x 6 m arena centred on the origin

# base (unicycle)
BASE_MASS = 10.0         # kg
BASE_INERTIA = 0.5       # kg m^2
BASE_RADIUS = 0.18       # footprint, blocks on circles
LIN_DRAG = 1.0           # nominal 1/s, scaled per episode
ANG_DRAG = 2.0
F_MAX = 30.0             # N, sized so worst-case draws still reach 1.2 m/s
TAU_MAX = 10.0           # N m
V_CMD_LO, V_CMD_HI = -0.5, 1.2   # m/s command range the low level accepts
W_CMD_MAX = 1.0                  # rad/s

# arm: two revolute joints in the vertical plane along the base heading
L1 = 0.25
L2 = 0.25
MOUNT_H = 0.30
Q_NEUTRAL = np.array([1.2, -2.0])
Q_LO = np.array([-0.6, -2.9])
Q_HI = np.array([2.6, 0.3])
ARM_DELTA_MAX = 0.05     # rad per step_world call

# gripper
GRIP_RATE = 2.0          # closure units per second
GRIP_HOLD_STALL = 0.85   # cube blocks full closure
FINGER_HALFSPAN = 0.04   # finger tips at +- halfspan * (1 - g) lateral
ATTACH_G = 0.8
DETACH_G = 0.5
GRASP_RADIUS = 0.02      # horizontal attach tolerance
GRASP_HEIGHT_MARGIN = 0.01

# task objects
CUBE_RADIUS = 0.03
CUBE_HEIGHT = 0.03       # resting top height
BASKET_RADIUS = 0.12
BASKET_RIM = 0.16
REACH_RADIUS = 0.55      # max planar arm reach (0.5) + margin, move-to predicates
LIFT_HEIGHT = 0.05
PLACE_HEIGHT_MARGIN = 0.02   # gripper must clear rim by this to place
RIM_HOVER = 0.05             # hover target above the rim for shaping

# camera (1-d ray fan from the gripper)
N_RAYS = 64
FOV = np.deg2rad(70.0)
MAX_RANGE = 4.0
VANTAGE_BASE = 1.0       # visible range = base + gain * gripper height
VANTAGE_GAIN = 10.0
FAN_JITTER = 0.01        # rad, whole-fan angular jitter on the raw channel

# domain randomization ranges (training regime)
GAIN_RANGE = (0.7, 1.3)
DRAG_RANGE = (0.5, 1.5)
MASS_RANGE = (0.8, 1.2)
ARM_NOISE_MAG = 0.02     # held joint-offset magnitude, resampled every 50 high steps
ARM_NOISE_PERIOD = 50    # high steps
MOUNT_XYZ = 0.01         # m
MOUNT_YAW = 2e-3         # rad
OBJ_PERTURB_RADIUS = 0.10
OBJ_PERTURB_PROB = 0.05  # per high step during stages 2, 3, 5
OBJ_PERTURB_TRIES = 10
SENSOR_DELAY_RANGE = (0.003, 0.013)   # per-episode mean, s
SENSOR_JITTER = 0.002
CAMERA_DELAY_RANGE = (0.030, 0.050)   # per frame, s
LOW_CTRL_DELAY_RANGE = (0.005, 0.007)

# appearance model
BAND_CENTERS = np.array([0.15, 0.40, 0.65, 0.90])   # red, green, blue, yellow
BAND_HALF = 0.06
BAND_OFFSET_MAG = 0.03   # per-episode offset of all bands
COLOR_NAMES = ("red", "green", "blue", "yellow")
DISTRACTOR_MAX = 8
DISTRACTOR_RADIUS = (0.05, 0.30)
DISTRACTOR_CLEARANCE = 0.4   # min distance to task objects
DISTRACTOR_SPAWN_CLEAR = 0.6  # min distance to robot start

# episode scheduling
DT_HIGH = DT_LOW * HIGH_EVERY
REPLAN_PERIOD = 5          # high steps between subtask recomputations
EPISODE_HIGH_STEPS = 600   # training cap, 60 s
EVAL_TIME_LIMIT = 90.0     # s, charged to failed episodes in timing metrics
COMPUTE_DELAY_DEPLOY = (0.020, 0.040)   # policy compute latency, deploy mode
