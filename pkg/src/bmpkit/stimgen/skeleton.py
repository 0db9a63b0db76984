"""Procedural 3D stick-figure actions.

Poses come from forward kinematics over a fixed-length bone hierarchy, so
bone lengths are constant by construction. Each action class is a set of
keyframed joint-angle tracks (plus a few periodic tracks) sampled on a
jittered time axis.

Axes: x lateral (actor's left is +x), y up, z forward (towards a frontal
camera). Units are metres; the ground is y = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import philox

JOINTS = (
    "head_top", "nose", "jaw", "eye_l", "eye_r", "ear_l", "ear_r",
    "shoulder_l", "shoulder_r", "elbow_l", "elbow_r", "hand_l", "hand_r",
    "abdomen", "hip_l", "hip_r", "knee_l", "knee_r", "ankle_l", "ankle_r",
    "heel_l", "heel_r", "toe_l", "toe_r",
)
J = {name: i for i, name in enumerate(JOINTS)}

_BONES = [
    ("shoulder_l", "shoulder_r"), ("hip_l", "hip_r"),
    ("abdomen", "shoulder_l"), ("abdomen", "shoulder_r"), ("abdomen", "hip_l"), ("abdomen", "hip_r"),
    ("head_top", "nose"), ("nose", "jaw"), ("nose", "eye_l"), ("nose", "eye_r"),
    ("eye_l", "ear_l"), ("eye_r", "ear_r"),
]
for _s in ("l", "r"):
    _BONES += [(f"shoulder_{_s}", f"elbow_{_s}"), (f"elbow_{_s}", f"hand_{_s}"),
               (f"hip_{_s}", f"knee_{_s}"), (f"knee_{_s}", f"ankle_{_s}"),
               (f"ankle_{_s}", f"heel_{_s}"), (f"ankle_{_s}", f"toe_{_s}"), (f"heel_{_s}", f"toe_{_s}")]
EDGES = tuple((J[a], J[b]) for a, b in _BONES)

# the eight long limb segments point lights may slide along
LIMB_EDGES = tuple((J[a], J[b]) for a, b in [
    ("shoulder_l", "elbow_l"), ("shoulder_r", "elbow_r"), ("elbow_l", "hand_l"), ("elbow_r", "hand_r"),
    ("hip_l", "knee_l"), ("hip_r", "knee_r"), ("knee_l", "ankle_l"), ("knee_r", "ankle_r"),
])

ACTIONS = ("sit_down", "stand_up", "jump_up", "kick", "arm_circles", "wave")
VIEW_ANGLES = (0.0, 45.0, 90.0)

UPPER_ARM, FOREARM, THIGH, SHIN = 0.30, 0.28, 0.45, 0.43
HEEL_DROP = 0.06
STAND_ROOT = 0.08 + THIGH + SHIN + HEEL_DROP


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    # positive angles swing -y towards +z
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rot_side(a: float, side: float) -> np.ndarray:
    """Abduction: positive angles swing -y towards the body side (side = +1 left, -1 right)."""
    c, s = math.cos(a), math.sin(side * a)
    return np.array([[c, s, 0], [-s, c, 0], [0, 0, 1]])


DOWN = np.array([0.0, -1.0, 0.0])
POSE_KEYS = ("root_y", "root_z", "lean", "head", "yaw",
             "sh_flex_l", "sh_flex_r", "sh_abd_l", "sh_abd_r", "elbow_l", "elbow_r", "el_abd_l", "el_abd_r",
             "hip_flex_l", "hip_flex_r", "hip_abd_l", "hip_abd_r", "knee_l", "knee_r", "ankle_l", "ankle_r")
NEUTRAL = {k: 0.0 for k in POSE_KEYS}
NEUTRAL.update(root_y=STAND_ROOT, sh_abd_l=0.12, sh_abd_r=0.12, elbow_l=0.15, elbow_r=0.15)


def forward_kinematics(p: dict, scale: float = 1.0) -> np.ndarray:
    """Joint-angle dict -> 24 x 3 joint positions."""
    out = np.zeros((len(JOINTS), 3))
    root = np.array([0.0, p["root_y"], p["root_z"]])
    R_p = rot_y(p["yaw"])
    R_t = R_p @ rot_x(-p["lean"])
    R_h = R_t @ rot_x(-p["head"])
    s = scale
    out[J["abdomen"]] = root
    neck = root + R_t @ (s * np.array([0.0, 0.47, 0.0]))
    out[J["head_top"]] = neck + R_h @ (s * np.array([0.0, 0.26, 0.0]))
    out[J["nose"]] = neck + R_h @ (s * np.array([0.0, 0.13, 0.10]))
    out[J["jaw"]] = neck + R_h @ (s * np.array([0.0, 0.05, 0.07]))
    for side, tag in ((1.0, "l"), (-1.0, "r")):
        out[J[f"eye_{tag}"]] = neck + R_h @ (s * np.array([side * 0.035, 0.16, 0.085]))
        out[J[f"ear_{tag}"]] = neck + R_h @ (s * np.array([side * 0.075, 0.13, 0.0]))
        sh = root + R_t @ (s * np.array([side * 0.18, 0.42, 0.0]))
        abd = p[f"sh_abd_{tag}"]
        flex = p[f"sh_flex_{tag}"]
        elbow = sh + R_t @ rot_side(abd, side) @ rot_x(flex) @ (s * UPPER_ARM * DOWN)
        fore = R_t @ rot_side(abd + p[f"el_abd_{tag}"], side) @ rot_x(flex + p[f"elbow_{tag}"])
        out[J[f"shoulder_{tag}"]] = sh
        out[J[f"elbow_{tag}"]] = elbow
        out[J[f"hand_{tag}"]] = elbow + fore @ (s * FOREARM * DOWN)

        hip = root + R_p @ (s * np.array([side * 0.10, -0.08, 0.0]))
        habd = p[f"hip_abd_{tag}"]
        hflex = p[f"hip_flex_{tag}"]
        knee = hip + R_p @ rot_side(habd, side) @ rot_x(hflex) @ (s * THIGH * DOWN)
        shin_R = R_p @ rot_side(habd, side) @ rot_x(hflex - p[f"knee_{tag}"])
        ankle = knee + shin_R @ (s * SHIN * DOWN)
        foot_R = shin_R @ rot_x(p[f"ankle_{tag}"])
        out[J[f"hip_{tag}"]] = hip
        out[J[f"knee_{tag}"]] = knee
        out[J[f"ankle_{tag}"]] = ankle
        out[J[f"heel_{tag}"]] = ankle + foot_R @ (s * np.array([0.0, -HEEL_DROP, -0.05]))
        out[J[f"toe_{tag}"]] = ankle + foot_R @ (s * np.array([0.0, -HEEL_DROP - 0.01, 0.15]))
    return out


# -- action templates ------------------------------------------------------------

Keyframes = list[tuple[float, dict]]


def _sit_keys() -> Keyframes:
    return [
        (0.0, {}),
        (0.15, {}),
        (0.5, dict(lean=0.55, hip_flex_l=0.9, hip_flex_r=0.9, knee_l=0.95, knee_r=0.95, ankle_l=0.2, ankle_r=0.2,
                   root_y=STAND_ROOT - 0.22, root_z=-0.2, sh_flex_l=0.6, sh_flex_r=0.6)),
        (0.85, dict(lean=0.2, hip_flex_l=1.57, hip_flex_r=1.57, knee_l=1.57, knee_r=1.57, root_y=0.08 + SHIN + HEEL_DROP,
                    root_z=-THIGH, sh_flex_l=0.25, sh_flex_r=0.25, elbow_l=0.9, elbow_r=0.9)),
        (1.0, dict(lean=0.2, hip_flex_l=1.57, hip_flex_r=1.57, knee_l=1.57, knee_r=1.57, root_y=0.08 + SHIN + HEEL_DROP,
                   root_z=-THIGH, sh_flex_l=0.25, sh_flex_r=0.25, elbow_l=0.9, elbow_r=0.9)),
    ]


def _jump_keys() -> Keyframes:
    crouch = dict(hip_flex_l=0.8, hip_flex_r=0.8, knee_l=1.3, knee_r=1.3, ankle_l=0.5, ankle_r=0.5,
                  root_y=STAND_ROOT - 0.2, lean=0.45, sh_flex_l=-0.7, sh_flex_r=-0.7)
    return [
        (0.0, {}),
        (0.22, crouch),
        (0.4, dict(root_y=STAND_ROOT + 0.06, sh_flex_l=2.6, sh_flex_r=2.6, ankle_l=-0.5, ankle_r=-0.5)),
        (0.55, dict(root_y=STAND_ROOT + 0.38, sh_flex_l=2.9, sh_flex_r=2.9, knee_l=0.5, knee_r=0.5,
                    hip_flex_l=0.3, hip_flex_r=0.3)),
        (0.7, dict(root_y=STAND_ROOT + 0.02, sh_flex_l=1.2, sh_flex_r=1.2)),
        (0.8, dict(crouch, root_y=STAND_ROOT - 0.12, sh_flex_l=0.5, sh_flex_r=0.5, lean=0.3)),
        (1.0, {}),
    ]


def _kick_keys() -> Keyframes:
    return [
        (0.0, {}),
        (0.2, dict(lean=-0.1, hip_flex_r=-0.35, knee_r=0.7, sh_abd_l=0.45, sh_abd_r=0.45)),
        (0.45, dict(lean=-0.3, hip_flex_r=1.35, knee_r=0.1, ankle_r=-0.4, sh_abd_l=0.7, sh_abd_r=0.7,
                    sh_flex_l=0.5)),
        (0.65, dict(lean=-0.1, hip_flex_r=0.7, knee_r=1.1, sh_abd_l=0.5, sh_abd_r=0.5)),
        (0.85, {}),
        (1.0, {}),
    ]


def _circle_keys() -> Keyframes:
    up = dict(sh_abd_l=1.5, sh_abd_r=1.5, elbow_l=0.0, elbow_r=0.0)
    return [(0.0, {}), (0.12, up), (0.88, up), (1.0, {})]


def _wave_keys() -> Keyframes:
    up = dict(sh_abd_r=2.5, elbow_r=0.3, head=0.05)
    return [(0.0, {}), (0.2, up), (0.82, up), (1.0, {})]


def _periodic(action: str, u: float, amp: float, phase: float) -> dict:
    """Oscillating tracks layered on top of the keyframes."""
    if action == "arm_circles":
        env = np.clip(min(u - 0.08, 0.92 - u) / 0.08, 0.0, 1.0)
        w = 2 * math.pi * (3.0 * u + phase)
        return dict(sh_flex_l=env * amp * 0.55 * math.sin(w), sh_flex_r=env * amp * 0.55 * math.sin(w),
                    sh_abd_l=env * amp * 0.5 * math.cos(w), sh_abd_r=env * amp * 0.5 * math.cos(w))
    if action == "wave":
        env = np.clip(min(u - 0.18, 0.84 - u) / 0.06, 0.0, 1.0)
        w = 2 * math.pi * (3.5 * u + phase)
        return dict(el_abd_r=env * amp * 0.6 * math.sin(w), elbow_r=env * amp * 0.25 * (1 + math.cos(w)))
    return {}


TEMPLATES = {
    "sit_down": _sit_keys,
    "stand_up": lambda: [(1.0 - t, kf) for t, kf in reversed(_sit_keys())],
    "jump_up": _jump_keys,
    "kick": _kick_keys,
    "arm_circles": _circle_keys,
    "wave": _wave_keys,
}


def _smooth(a: float) -> float:
    return a * a * (3 - 2 * a)


def sample_keyframes(keys: Keyframes, u: float, amp: float) -> dict:
    """Smoothstep interpolation between keyframes; ``amp`` scales deviations from neutral."""
    u = min(max(u, 0.0), 1.0)
    times = [t for t, _ in keys]
    i = int(np.searchsorted(times, u, side="right")) - 1
    i = min(max(i, 0), len(keys) - 2)
    t0, k0 = keys[i]
    t1, k1 = keys[i + 1]
    a = 0.0 if t1 <= t0 else _smooth((u - t0) / (t1 - t0))
    out = {}
    for key in POSE_KEYS:
        v0 = k0.get(key, NEUTRAL[key])
        v1 = k1.get(key, NEUTRAL[key])
        v = v0 + a * (v1 - v0)
        out[key] = NEUTRAL[key] + amp * (v - NEUTRAL[key])
    return out


@dataclass
class Jitter:
    amplitude: float = 1.0
    speed: float = 1.0
    shift: float = 0.0
    phase: float = 0.0
    scale: float = 1.0

    @classmethod
    def sample(cls, rng: np.random.Generator, strength: float = 0.15) -> "Jitter":
        def u():
            return float(rng.uniform(-strength, strength))
        return cls(amplitude=1 + u(), speed=1 + u(), shift=0.5 * u(), phase=u(), scale=1 + 0.5 * u())


@dataclass
class PoseSequence:
    joints: np.ndarray  # T x 24 x 3
    action: str
    label: int
    seed: int
    view_angle: float = 0.0
    jitter: Jitter = field(default_factory=Jitter)
    joint_names: tuple[str, ...] = JOINTS
    edges: tuple[tuple[int, int], ...] = EDGES

    @property
    def T(self) -> int:
        return self.joints.shape[0]

    def bone_lengths(self) -> np.ndarray:
        a = np.array([e[0] for e in self.edges])
        b = np.array([e[1] for e in self.edges])
        return np.linalg.norm(self.joints[:, a] - self.joints[:, b], axis=-1)

    def reorder(self, order) -> "PoseSequence":
        return PoseSequence(self.joints[np.asarray(order)], self.action, self.label, self.seed,
                            self.view_angle, self.jitter)

    def static(self, frame: int = 0) -> "PoseSequence":
        joints = np.repeat(self.joints[frame : frame + 1], self.T, axis=0)
        return PoseSequence(joints, self.action, self.label, self.seed, self.view_angle, self.jitter)


def synth_pose(action: str, T: int = 32, seed: int = 0, view_angle: float = 0.0,
               jitter_strength: float = 0.15) -> PoseSequence:
    """Sample one action clip of T frames, rotated about the vertical axis by ``view_angle`` degrees."""
    if action not in TEMPLATES:
        raise ValueError(f"unknown action class {action!r}; expected one of {ACTIONS}")
    rng = philox(seed)
    jit = Jitter.sample(rng, jitter_strength) if jitter_strength > 0 else Jitter()
    keys = TEMPLATES[action]()
    frames = np.empty((T, len(JOINTS), 3))
    R_view = rot_y(math.radians(view_angle))
    for t in range(T):
        x = t / (T - 1) if T > 1 else 0.0
        u = (x - 0.5) * jit.speed + 0.5 + jit.shift
        params = sample_keyframes(keys, u, jit.amplitude)
        for k, v in _periodic(action, min(max(u, 0.0), 1.0), jit.amplitude, jit.phase).items():
            params[k] += v
        # root height offset scales with the actor, everything else is angular
        params["root_y"] = params["root_y"] * jit.scale
        params["root_z"] = params["root_z"] * jit.scale
        frames[t] = forward_kinematics(params, jit.scale) @ R_view.T
    return PoseSequence(frames, action, ACTIONS.index(action), seed, view_angle, jit)
