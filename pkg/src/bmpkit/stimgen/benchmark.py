"""The full condition grid, written as PNG frame folders plus a JSON manifest.

Videos share poses across conditions: item k of class c uses the same
underlying pose sequence in every condition, so conditions differ only in
how that motion is rendered. View conditions fix the camera angle; every
other condition draws it from {-45, 0, 45} degrees per item.
"""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .conditions import ALL_CONDITIONS, ConditionSpec
from .render import Camera, PointLightVideo, render_condition
from .rng import derive_seed, philox
from .skeleton import ACTIONS, JOINTS, PoseSequence, synth_pose

MANIFEST_VERSION = 1
BASE_VIEWS = (-45.0, 0.0, 45.0)


@dataclass(frozen=True)
class VideoPlan:
    video_id: str
    condition: str
    action: str
    label: int
    item: int
    pose_seed: int
    render_seed: int
    view_angle: float
    T: int = 32
    size: int = 224

    def pose(self) -> PoseSequence:
        return synth_pose(self.action, self.T, self.pose_seed, self.view_angle)

    def render(self) -> PointLightVideo:
        return render_condition(self.pose(), self.condition, self.render_seed, camera=Camera(self.size))


def plan_videos(classes=ACTIONS, per_class_count: int = 10, seed: int = 0, conditions=ALL_CONDITIONS,
                T: int = 32, size: int = 224, offset: int = 0) -> list[VideoPlan]:
    """Enumerate every (condition, class, item) with its seeds. ``offset`` shifts item numbering."""
    plans = []
    for cond_name in conditions:
        cond = ConditionSpec.parse(cond_name)
        for c, action in enumerate(classes):
            if action not in ACTIONS:
                raise ValueError(f"unknown action class {action!r}")
            for k in range(offset, offset + per_class_count):
                pose_seed = derive_seed(seed, c, k, "pose")
                if cond.view is not None:
                    view = float(cond.view)
                else:
                    view = float(philox(derive_seed(seed, c, k, "view")).choice(BASE_VIEWS))
                plans.append(VideoPlan(
                    video_id=f"{cond_name}/{action}_{k:04d}", condition=cond_name, action=action, label=c,
                    item=k, pose_seed=pose_seed, render_seed=derive_seed(seed, c, k, cond_name),
                    view_angle=view, T=T, size=size))
    return plans


def write_video(vid: PointLightVideo, directory: Path) -> list[str]:
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for t, frame in enumerate(vid.frames):
        name = f"frame_{t:03d}.png"
        Image.fromarray(frame, mode="L").save(directory / name, compress_level=6)
        names.append(name)
    return names


def read_video(directory) -> np.ndarray:
    files = sorted(Path(directory).glob("frame_*.png"))
    if not files:
        raise FileNotFoundError(f"no frame_*.png files in {directory}")
    return np.stack([np.asarray(Image.open(f).convert("L")) for f in files])


def _build_one(args) -> dict:
    plan, root = args
    vid = plan.render()
    d = Path(root) / plan.video_id
    try:
        write_video(vid, d)
        meta = asdict(plan)
        meta["dot_radius"] = vid.dot_radius
        (d / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    except OSError as exc:
        raise OSError(f"failed writing video {plan.video_id} under {d}: {exc}") from exc
    return {"file": plan.video_id, "label": plan.label, "class_name": plan.action, "condition": plan.condition,
            "seed": plan.render_seed, "pose_seed": plan.pose_seed, "view_angle": plan.view_angle}


def build_benchmark(out_dir, classes=ACTIONS, per_class_count: int = 10, seed: int = 0,
                    conditions=ALL_CONDITIONS, T: int = 32, size: int = 224, jobs: int = 1) -> dict:
    """Render every planned video to ``out_dir`` and write ``manifest.json``."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    plans = plan_videos(classes, per_class_count, seed, conditions, T, size)
    work = [(p, str(root)) for p in plans]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            entries = list(pool.map(_build_one, work, chunksize=4))
    else:
        entries = [_build_one(w) for w in work]
    manifest = {"version": MANIFEST_VERSION, "seed": seed, "T": T, "size": size, "classes": list(classes),
                "conditions": list(conditions), "videos": entries}
    path = root / "manifest.json"
    try:
        path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    except OSError as exc:
        raise OSError(f"failed writing manifest {path}: {exc}") from exc
    return manifest


def load_manifest(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    m = json.loads(p.read_text())
    if m.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {m.get('version')!r} in {p}")
    return m


def load_pose_json(path, T: int = 32) -> PoseSequence:
    """Import an external pose track and resample it to T frames.

    Expected JSON: ``{"joint_names": [...], "frames": [[[x, y, z], ...], ...],
    "action": str, "label": int}``. Joints missing from the file are an error.
    """
    d = json.loads(Path(path).read_text())
    names = d["joint_names"]
    missing = [j for j in JOINTS if j not in names]
    if missing:
        raise ValueError(f"pose file {path} lacks joints {missing}")
    raw = np.asarray(d["frames"], dtype=np.float64)[:, [names.index(j) for j in JOINTS]]
    src = np.linspace(0.0, 1.0, raw.shape[0])
    dst = np.linspace(0.0, 1.0, T)
    flat = raw.reshape(raw.shape[0], -1)
    res = np.stack([np.interp(dst, src, flat[:, i]) for i in range(flat.shape[1])], axis=1)
    return PoseSequence(res.reshape(T, len(JOINTS), 3), d.get("action", "unknown"), int(d.get("label", -1)), -1)
