"""Deterministic per-patch descriptors standing in for a frozen image backbone.

Each patch is described only by its own pixels, so identical patch content
gives identical descriptors wherever it appears (translation covariance at
patch granularity). Raw channels, in order:

    0      mean intensity
    1, 2   intensity-weighted centroid offset (x, y) in patch widths
    3..10  8-bin histogram of gradient orientation weighted by magnitude
    11     intensity variance

Weighted raw channels go through a seeded projection to C=32: random Fourier
features ``cos(x W + b)`` by default, or a plain linear map.

All-black patches map to a reserved constant descriptor instead of the
zero vector, which keeps l2-normalisation and adjacency well defined.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .patchflow import FeatureSequence

RAW_CHANNELS = 12
N_ORIENT = 8


@dataclass(frozen=True)
class PatchDescriptorConfig:
    grid: tuple[int, int] = (14, 14)
    project_dim: int | None = 32
    projection_seed: int = 1234
    projection: str = "fourier"  # "fourier" | "linear"
    fourier_scale: float = 0.35
    normalization: str = "none"  # "none" | "l2"
    channel_weights: tuple[float, ...] = field(
        default=(2.0, 4.0, 4.0) + (8.0,) * N_ORIENT + (2.0,)
    )

    def __post_init__(self):
        if self.normalization not in ("none", "l2"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.projection not in ("fourier", "linear"):
            raise ValueError(f"unknown projection {self.projection!r}")
        if self.fourier_scale <= 0:
            raise ValueError("fourier_scale must be positive")
        if len(self.channel_weights) != RAW_CHANNELS:
            raise ValueError("channel_weights must have 12 entries")


def reserved_empty_raw() -> np.ndarray:
    """Raw descriptor assigned to all-black patches."""
    e = np.zeros(RAW_CHANNELS)
    e[0] = -1.0
    return e


def projection_matrix(cfg: PatchDescriptorConfig) -> np.ndarray | None:
    """Seeded 12 x C projection; for ``"fourier"`` the columns are frequencies with scale ``1/fourier_scale``."""
    if cfg.project_dim is None:
        return None
    rng = np.random.Generator(np.random.Philox(cfg.projection_seed))
    W = rng.normal(size=(RAW_CHANNELS, cfg.project_dim))
    if cfg.projection == "linear":
        return W / np.sqrt(cfg.project_dim)
    return W / cfg.fourier_scale


def fourier_phases(cfg: PatchDescriptorConfig) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(cfg.projection_seed + 1))
    return rng.uniform(0.0, 2 * np.pi, size=cfg.project_dim)


def _to_float(frames: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames)
    if frames.dtype == np.uint8:
        return frames.astype(np.float64) / 255.0
    return frames.astype(np.float64)


def raw_descriptors(frames: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """T x H x W frames -> T x N x 12 raw descriptors (before weighting/projection)."""
    v = _to_float(frames)
    if v.ndim == 2:
        v = v[None]
    T, Hp, Wp = v.shape
    gh, gw = grid
    if Hp % gh or Wp % gw:
        raise ValueError(f"frame size {Hp}x{Wp} not divisible by grid {gh}x{gw}")
    ph, pw = Hp // gh, Wp // gw
    p = v.reshape(T, gh, ph, gw, pw).transpose(0, 1, 3, 2, 4).reshape(T, gh * gw, ph, pw)

    mass = p.sum(axis=(2, 3))
    area = ph * pw
    mean = mass / area
    xs = (np.arange(pw) + 0.5) / pw - 0.5
    ys = (np.arange(ph) + 0.5) / ph - 0.5
    safe = np.where(mass > 0, mass, 1.0)
    cx = (p * xs[None, None, None, :]).sum(axis=(2, 3)) / safe
    cy = (p * ys[None, None, :, None]).sum(axis=(2, 3)) / safe
    var = p.reshape(T, gh * gw, -1).var(axis=-1)

    # gradients restricted to the patch interior so neighbours never leak in
    gx = 0.5 * (p[..., 1:, 1:] - p[..., 1:, :-1] + p[..., :-1, 1:] - p[..., :-1, :-1])
    gy = 0.5 * (p[..., 1:, 1:] - p[..., :-1, 1:] + p[..., 1:, :-1] - p[..., :-1, :-1])
    mag = np.sqrt(gx * gx + gy * gy)
    ang = np.mod(np.arctan2(gy, gx), 2 * np.pi)
    bins = np.minimum((ang / (2 * np.pi) * N_ORIENT).astype(np.int64), N_ORIENT - 1)
    hist = np.zeros((T, gh * gw, N_ORIENT))
    flat_bins = bins.reshape(T, gh * gw, -1)
    flat_mag = mag.reshape(T, gh * gw, -1)
    for b in range(N_ORIENT):
        hist[..., b] = (flat_mag * (flat_bins == b)).sum(axis=-1)
    hist /= area

    raw = np.concatenate([mean[..., None], cx[..., None], cy[..., None], hist, var[..., None]], axis=-1)
    empty = mass <= 0
    raw[empty] = reserved_empty_raw()
    return raw


def finalize(raw: np.ndarray, cfg: PatchDescriptorConfig) -> np.ndarray:
    """Weight, optionally project and normalise raw descriptors."""
    out = raw * np.asarray(cfg.channel_weights)
    empty = np.all(raw == reserved_empty_raw(), axis=-1)
    out[empty] = reserved_empty_raw()
    W = projection_matrix(cfg)
    if W is not None and cfg.projection == "linear":
        out = out @ W
    elif W is not None:
        # random Fourier features: a single small dot is described almost only by its
        # sub-patch offset; the cosine map separates different offsets far more than a
        # linear map, which keeps distinct dots from collapsing onto one direction
        out = np.cos(out @ W + fourier_phases(cfg))
    if cfg.normalization == "l2":
        out = out / np.linalg.norm(out, axis=-1, keepdims=True)
    return out


def empty_descriptor(cfg: PatchDescriptorConfig) -> np.ndarray:
    return finalize(reserved_empty_raw()[None], cfg)[0]


def extract_features(frames, cfg: PatchDescriptorConfig | None = None,
                     video_id: str = "") -> FeatureSequence:
    """Frame stack (T x H x W, uint8 or [0, 1] floats) -> FeatureSequence T x N x C.

    Anything with a ``frames`` attribute (a rendered video) is accepted too.
    """
    cfg = cfg or PatchDescriptorConfig()
    frames = getattr(frames, "frames", frames)
    raw = raw_descriptors(frames, cfg.grid)
    return FeatureSequence(finalize(raw, cfg), tuple(cfg.grid), video_id)


@dataclass
class TranslationFixture:
    sequence: FeatureSequence
    displacement: tuple[int, int]
    positions: np.ndarray  # T x P x 2 grid coordinates of the object patches
    object_shape: tuple[int, int]

    def object_indices(self, t: int) -> np.ndarray:
        W = self.sequence.grid_dims[1]
        pos = self.positions[t]
        return pos[:, 1] * W + pos[:, 0]

    def true_flow(self) -> np.ndarray:
        """Planted per-step displacement, (T - 1) x 2."""
        return np.tile(np.asarray(self.displacement, dtype=np.float64), (self.sequence.T - 1, 1))


def translation_fixture(H: int, W: int, T: int, displacement_per_frame=(1, 0), seed: int = 0,
                        object_shape: tuple[int, int] = (2, 2), channels: int = 32,
                        cfg: PatchDescriptorConfig | None = None) -> TranslationFixture:
    """Rigidly translating block of distinct-feature patches on an empty background.

    Each object patch keeps its own random descriptor while the block moves by
    an integer ``(dx, dy)`` grid units per frame.
    """
    dx, dy = (int(d) for d in displacement_per_frame)
    oh, ow = object_shape
    if oh * ow < 4:
        raise ValueError("object needs at least 4 patches")
    span_x = ow + abs(dx) * (T - 1)
    span_y = oh + abs(dy) * (T - 1)
    if span_x > W or span_y > H:
        raise ValueError(f"object of {oh}x{ow} moving ({dx},{dy}) for {T} frames leaves a {H}x{W} grid")
    rng = np.random.Generator(np.random.Philox(seed))
    x0_min = 0 if dx >= 0 else -dx * (T - 1)
    y0_min = 0 if dy >= 0 else -dy * (T - 1)
    x0 = x0_min + int(rng.integers(0, W - span_x + 1))
    y0 = y0_min + int(rng.integers(0, H - span_y + 1))

    if cfg is not None:
        background = empty_descriptor(cfg)
        channels = background.shape[0]
    else:
        background = np.zeros(channels)
        background[0] = -1.0
    obj = rng.normal(size=(oh * ow, channels))
    oy, ox = np.divmod(np.arange(oh * ow), ow)

    feats = np.tile(background, (T, H * W, 1))
    positions = np.empty((T, oh * ow, 2), dtype=np.int64)
    for t in range(T):
        px = x0 + ox + dx * t
        py = y0 + oy + dy * t
        positions[t] = np.stack([px, py], axis=1)
        feats[t, py * W + px] = obj
    seq = FeatureSequence(feats, (H, W), f"translation-{seed}")
    return TranslationFixture(seq, (dx, dy), positions, (oh, ow))
