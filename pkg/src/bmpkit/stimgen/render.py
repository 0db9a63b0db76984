"""Rasterisers for the three stimulus families.

All renderers use the same orthographic camera: world x maps to columns,
world y to rows, and depth is dropped. Output frames are uint8 grayscale.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conditions import ConditionSpec
from .rng import philox
from .skeleton import J, LIMB_EDGES, PoseSequence

JOINT_SUBSETS: dict[int, tuple[str, ...]] = {
    5: ("nose", "hand_l", "hand_r", "ankle_l", "ankle_r"),
    6: ("nose", "abdomen", "hand_l", "hand_r", "ankle_l", "ankle_r"),
    10: ("nose", "abdomen", "shoulder_l", "shoulder_r", "hand_l", "hand_r", "hip_l", "hip_r",
         "ankle_l", "ankle_r"),
    14: ("nose", "abdomen", "shoulder_l", "shoulder_r", "elbow_l", "elbow_r", "hand_l", "hand_r",
         "hip_l", "hip_r", "knee_l", "knee_r", "ankle_l", "ankle_r"),
    18: ("head_top", "nose", "jaw", "abdomen", "ear_l", "ear_r", "shoulder_l", "shoulder_r",
         "elbow_l", "elbow_r", "hand_l", "hand_r", "hip_l", "hip_r", "knee_l", "knee_r",
         "ankle_l", "ankle_r"),
    26: ("head_top", "nose", "jaw", "abdomen", "eye_l", "eye_r", "ear_l", "ear_r",
         "shoulder_l", "shoulder_r", "elbow_l", "elbow_r", "hand_l", "hand_r",
         "hip_l", "hip_r", "knee_l", "knee_r"),  # plus four points per foot
}
FOOT_FRACTIONS = (0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0)  # heel -> toe


@dataclass(frozen=True)
class Camera:
    size: int = 224
    y_top: float = 2.45  # world metres at the top row
    extent: float = 2.6  # world metres spanned by the image height

    @property
    def px_per_m(self) -> float:
        return self.size / self.extent

    def project(self, xyz: np.ndarray) -> np.ndarray:
        """(..., 3) world points -> (..., 2) pixel (col, row)."""
        s = self.px_per_m
        col = self.size / 2 + xyz[..., 0] * s
        row = (self.y_top - xyz[..., 1]) * s
        return np.stack([col, row], axis=-1)


@dataclass
class PointLightVideo:
    frames: np.ndarray  # T x H x W uint8
    condition: ConditionSpec
    dot_radius: float = 3.0
    points: np.ndarray | None = None  # T x P x 2 pixel centres, J and SP only
    label: int = -1
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    def reorder(self, order) -> "PointLightVideo":
        order = np.asarray(order)
        pts = None if self.points is None else self.points[order]
        meta = dict(self.meta)
        if "u" in meta:
            meta["u"] = np.asarray(meta["u"])[order]
        return PointLightVideo(self.frames[order], self.condition, self.dot_radius, pts, self.label, meta)


# -- primitives ------------------------------------------------------------------


def draw_dots(H: int, W: int, centres: np.ndarray, radius: float) -> np.ndarray:
    """Anti-aliased white discs, max-combined, as float coverage in [0, 1]."""
    out = np.zeros((H, W))
    reach = int(np.ceil(radius + 1))
    for cx, cy in centres:
        x0, x1 = max(int(np.floor(cx)) - reach, 0), min(int(np.floor(cx)) + reach + 2, W)
        y0, y1 = max(int(np.floor(cy)) - reach, 0), min(int(np.floor(cy)) + reach + 2, H)
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        d = np.hypot(xx - cx, yy - cy)
        cov = np.clip(radius + 0.5 - d, 0.0, 1.0)
        np.maximum(out[y0:y1, x0:x1], cov, out=out[y0:y1, x0:x1])
    return out


def separate_points(pts: np.ndarray, min_dist: float, lo: float, hi: float, iters: int = 200) -> np.ndarray:
    """Push points apart until every pair is at least ``min_dist`` apart, keeping them in [lo, hi]."""
    p = np.clip(np.asarray(pts, dtype=np.float64).copy(), lo, hi)
    n = len(p)
    if n < 2:
        return p
    for _ in range(iters):
        diff = p[:, None, :] - p[None, :, :]
        d = np.hypot(diff[..., 0], diff[..., 1])
        np.fill_diagonal(d, np.inf)
        i_idx, j_idx = np.nonzero(np.triu(d < min_dist, 1))
        if len(i_idx) == 0:
            break
        for i, j in zip(i_idx, j_idx):
            delta = p[i] - p[j]
            dist = float(np.hypot(*delta))
            if dist < 1e-9:
                ang = 2.399963 * (i + 1)  # golden-angle fallback, deterministic
                delta, dist = np.array([np.cos(ang), np.sin(ang)]), 1.0
            push = (min_dist - dist) / 2 + 0.05
            step = delta / dist * push
            p[i] += step
            p[j] -= step
        np.clip(p, lo, hi, out=p)
    return p


def _to_uint8(cov: np.ndarray) -> np.ndarray:
    return np.round(np.clip(cov, 0.0, 1.0) * 255.0).astype(np.uint8)


def _point_frames(points: np.ndarray, size: int, radius: float) -> tuple[np.ndarray, np.ndarray]:
    min_dist = 2 * radius + 3.5  # leaves at least one dark pixel between discs
    lo, hi = radius + 2.0, size - radius - 3.0
    placed = np.stack([separate_points(p, min_dist, lo, hi) for p in points])
    frames = np.stack([_to_uint8(draw_dots(size, size, p, radius)) for p in placed])
    return frames, placed


# -- families ----------------------------------------------------------------------


def joint_positions(pose: PoseSequence, P: int) -> np.ndarray:
    """World positions of the P light points: T x P x 3."""
    if P not in JOINT_SUBSETS:
        raise ValueError(f"unsupported point count {P}; expected one of {sorted(JOINT_SUBSETS)}")
    idx = [J[n] for n in JOINT_SUBSETS[P]]
    out = pose.joints[:, idx]
    if P == 26:
        feet = []
        for side in ("l", "r"):
            heel, toe = pose.joints[:, J[f"heel_{side}"]], pose.joints[:, J[f"toe_{side}"]]
            feet += [heel + f * (toe - heel) for f in FOOT_FRACTIONS]
        out = np.concatenate([out, np.stack(feet, axis=1)], axis=1)
    return out


def render_joint(pose: PoseSequence, P: int, dot_radius: float = 3.0, camera: Camera | None = None
                 ) -> PointLightVideo:
    cam = camera or Camera()
    pts = cam.project(joint_positions(pose, P))
    frames, placed = _point_frames(pts, cam.size, dot_radius)
    cond = ConditionSpec("J", P=P)
    return PointLightVideo(frames, cond, dot_radius, placed, pose.label,
                           {"view_angle": pose.view_angle, "action": pose.action})


def sp_parameters(T: int, P: int, LT: int, seed: int, n_edges: int = len(LIMB_EDGES)):
    """Edge assignment (P,) and per-frame limb parameters u (T x P)."""
    rng = philox(seed)
    perm = rng.permutation(n_edges)
    edges = perm[np.arange(P) % n_edges]
    n_win = -(-T // LT)
    u_win = rng.uniform(0.0, 1.0, size=(n_win, P))
    u = u_win[np.arange(T) // LT]
    return edges, u


def render_sp(pose: PoseSequence, P: int, LT: int, seed: int = 0, dot_radius: float = 3.0,
              camera: Camera | None = None) -> PointLightVideo:
    cond = ConditionSpec("SP", P=P, LT=LT)
    cam = camera or Camera()
    edges, u = sp_parameters(pose.T, P, LT, seed)
    a = pose.joints[:, [LIMB_EDGES[e][0] for e in edges]]
    b = pose.joints[:, [LIMB_EDGES[e][1] for e in edges]]
    world = a + u[..., None] * (b - a)
    frames, placed = _point_frames(cam.project(world), cam.size, dot_radius)
    return PointLightVideo(frames, cond, dot_radius, placed, pose.label,
                           {"u": u, "edges": edges.tolist(), "seed": seed, "view_angle": pose.view_angle,
                            "action": pose.action})


def textured_background(size: int, rng: np.random.Generator, lo: float = 18.0, hi: float = 58.0) -> np.ndarray:
    """Smooth low-contrast value noise, strictly positive."""
    from scipy.ndimage import zoom

    coarse = rng.uniform(0.0, 1.0, size=(8, 8))
    fine = rng.uniform(0.0, 1.0, size=(28, 28))
    tex = 0.7 * zoom(coarse, size / 8, order=1) + 0.3 * zoom(fine, size / 28, order=1)
    tex = tex[:size, :size]
    return lo + (hi - lo) * tex


def _segment_coverage(out: np.ndarray, a: np.ndarray, b: np.ndarray, half: float) -> None:
    H, W = out.shape
    reach = half + 1.5
    x0 = max(int(np.floor(min(a[0], b[0]) - reach)), 0)
    x1 = min(int(np.ceil(max(a[0], b[0]) + reach)) + 1, W)
    y0 = max(int(np.floor(min(a[1], b[1]) - reach)), 0)
    y1 = min(int(np.ceil(max(a[1], b[1]) + reach)) + 1, H)
    if x0 >= x1 or y0 >= y1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    ab = b - a
    L2 = float(ab @ ab)
    if L2 < 1e-12:
        t = np.zeros_like(xx)
    else:
        t = np.clip(((xx - a[0]) * ab[0] + (yy - a[1]) * ab[1]) / L2, 0.0, 1.0)
    d = np.hypot(xx - (a[0] + t * ab[0]), yy - (a[1] + t * ab[1]))
    cov = np.clip(half + 0.5 - d, 0.0, 1.0)
    np.maximum(out[y0:y1, x0:x1], cov, out=out[y0:y1, x0:x1])


_FIGURE_SEGMENTS = tuple(LIMB_EDGES) + tuple((J[a], J[b]) for a, b in [
    ("shoulder_l", "shoulder_r"), ("hip_l", "hip_r"), ("abdomen", "shoulder_l"), ("abdomen", "shoulder_r"),
    ("abdomen", "hip_l"), ("abdomen", "hip_r"), ("ankle_l", "toe_l"), ("ankle_r", "toe_r"),
    ("heel_l", "toe_l"), ("heel_r", "toe_r"), ("ankle_l", "heel_l"), ("ankle_r", "heel_r"),
])


def render_rgblike(pose: PoseSequence, seed: int = 0, camera: Camera | None = None) -> PointLightVideo:
    """Filled stick figure of one gray level over a textured background."""
    cam = camera or Camera()
    rng = philox(seed)
    gray = float(rng.uniform(150.0, 255.0))
    thick = rng.uniform(5.0, 9.0, size=len(_FIGURE_SEGMENTS))
    torso = float(rng.uniform(10.0, 16.0))
    bg = textured_background(cam.size, rng)
    px = cam.project(pose.joints)
    head_r = 0.11 * pose.jitter.scale * cam.px_per_m
    frames = np.empty((pose.T, cam.size, cam.size), np.uint8)
    for t in range(pose.T):
        p = px[t]
        cov = np.zeros((cam.size, cam.size))
        for (i, j), th in zip(_FIGURE_SEGMENTS, thick):
            _segment_coverage(cov, p[i], p[j], th / 2)
        mid_sh = (p[J["shoulder_l"]] + p[J["shoulder_r"]]) / 2
        mid_hip = (p[J["hip_l"]] + p[J["hip_r"]]) / 2
        _segment_coverage(cov, mid_sh, mid_hip, torso / 2)
        _segment_coverage(cov, mid_sh, p[J["jaw"]], 3.0)
        head_c = (p[J["head_top"]] + p[J["jaw"]]) / 2
        np.maximum(cov, draw_dots(cam.size, cam.size, head_c[None], head_r), out=cov)
        frames[t] = np.round(bg * (1 - cov) + gray * cov).astype(np.uint8)
    return PointLightVideo(frames, ConditionSpec("RGB"), 0.0, None, pose.label,
                           {"gray": gray, "view_angle": pose.view_angle, "action": pose.action,
                            "joints_px": px})


def render_condition(pose: PoseSequence, cond: ConditionSpec | str, seed: int = 0,
                     dot_radius: float = 3.0, camera: Camera | None = None) -> PointLightVideo:
    """Render a pose under any named condition, temporal manipulation included."""
    from .conditions import temporal_transform

    if isinstance(cond, str):
        cond = ConditionSpec.parse(cond)
    if cond.kind == "RGB":
        vid = render_rgblike(pose, seed, camera)
    elif cond.kind == "J":
        vid = render_joint(pose, cond.P, dot_radius, camera)
    else:
        vid = render_sp(pose, cond.P, cond.LT, seed, dot_radius, camera)
    if cond.temporal:
        vid = temporal_transform(vid, cond.temporal, seed=seed)
    vid.condition = cond
    return vid
