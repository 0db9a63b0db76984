"""Patch-level optical flow from feature-similarity adjacency matrices.

Every patch of a reference frame ``t`` is softly located in every other frame
``j`` through a temperature-sharpened cosine-similarity adjacency matrix; the
located positions ``G_hat[t, j]`` are convex combinations of grid coordinates.
Flows are differences of located positions between frames.

Frame indices are 0-based throughout.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensorcore import Tensor, l2_normalize, l2_normalize_np, matmul, softmax, softmax_np

DEFAULT_TAU = 0.001
DEFAULT_GAMMA = 0.2
DEFAULT_FLOOR = 1e-6


def grid_coords(H: int, W: int) -> np.ndarray:
    """Row-major patch coordinates; row k is ``(k mod W, k div W)``."""
    if H < 1 or W < 1:
        raise ValueError(f"grid must be at least 1x1, got {H}x{W}")
    k = np.arange(H * W)
    return np.stack([k % W, k // W], axis=1).astype(np.int64)


@dataclass
class FeatureSequence:
    features: np.ndarray  # T x N x C
    grid_dims: tuple[int, int]  # (H, W)
    video_id: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features)
        H, W = self.grid_dims
        if self.features.ndim != 3 or self.features.shape[1] != H * W:
            raise ValueError(f"features {self.features.shape} inconsistent with grid {H}x{W}")
        if not np.isfinite(self.features).all():
            raise ValueError("features contain non-finite values")

    @property
    def T(self) -> int:
        return self.features.shape[0]

    @property
    def N(self) -> int:
        return self.features.shape[1]

    @property
    def grid(self) -> np.ndarray:
        return grid_coords(*self.grid_dims)

    def permuted(self, order) -> "FeatureSequence":
        return FeatureSequence(self.features[np.asarray(order)], self.grid_dims, self.video_id)


@dataclass
class DenseFlow:
    stride: int
    flows: np.ndarray  # T x N x 2 x (T/s - 1)
    gamma: float | None = DEFAULT_GAMMA
    floor: float = DEFAULT_FLOOR
    meta: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.flows.shape[-1]

    def flat(self) -> np.ndarray:
        """(T*N) x D rows with D = 2 * steps, laid out as [dx_1..dx_L, dy_1..dy_L]."""
        T, N = self.flows.shape[:2]
        return self.flows.reshape(T * N, -1)


def adjacency(a, b, tau: float = DEFAULT_TAU):
    """Row-stochastic similarity ``softmax_rows(f(a) f(b)^T / tau)``, f = l2 normalisation.

    Tensors in give a differentiable tensor out; arrays in give an array.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if isinstance(a, Tensor) or isinstance(b, Tensor):
        sim = matmul(l2_normalize(a), l2_normalize(b).T)
        return softmax(sim, axis=-1, tau=tau)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    sim = l2_normalize_np(a) @ np.swapaxes(l2_normalize_np(b), -1, -2)
    return softmax_np(sim, axis=-1, tau=tau)


def transition_positions(F_i, F_j, G, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Soft positions in frame j of every patch of frame i: ``Q(F_i, F_j) @ G``."""
    return adjacency(F_i, F_j, tau) @ np.asarray(G, dtype=np.float64)


def all_transitions(seq: FeatureSequence, tau: float = DEFAULT_TAU, dtype=np.float64) -> np.ndarray:
    """``G_hat[t, j]`` for every reference frame t and target frame j: T x T x N x 2."""
    T, N, _ = seq.features.shape
    fn = l2_normalize_np(seq.features.astype(dtype))
    G = seq.grid.astype(dtype)
    flat = fn.reshape(T * N, -1).T
    out = np.empty((T, T, N, 2), dtype=dtype)
    for t in range(T):
        sim = (fn[t] @ flat).reshape(N, T, N).transpose(1, 0, 2)  # j, n, n'
        q = softmax_np(sim, axis=-1, tau=tau)
        out[t] = q @ G
    return out


def subsample_frames(T: int, stride: int) -> np.ndarray:
    if stride < 1 or T % stride:
        raise ValueError(f"T={T} is not divisible by stride {stride}")
    return np.arange(0, T, stride)


def consecutive_flows(seq: FeatureSequence, ref_t: int, m: int, stride: int = 1,
                      tau: float = DEFAULT_TAU) -> np.ndarray:
    """Unthresholded ``G_hat[t -> m+s] - G_hat[t -> m]`` for one reference frame."""
    T = seq.T
    if not (0 <= ref_t < T) or m % stride or not (0 <= m and m + stride < T):
        raise IndexError(f"frames {m}->{m + stride} (stride {stride}) or reference {ref_t} out of range for T={T}")
    F, G = seq.features, seq.grid
    return transition_positions(F[ref_t], F[m + stride], G, tau) - transition_positions(F[ref_t], F[m], G, tau)


def threshold_flows(flows: np.ndarray, gamma: float | None, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """Replace every 2-vector (axis -2) with norm below ``gamma`` by ``(floor, floor)``."""
    if gamma is None:
        return flows.copy()
    out = flows.copy()
    norm = np.sqrt((flows * flows).sum(axis=-2, keepdims=True))
    small = np.broadcast_to(norm < gamma, flows.shape)
    out[small] = floor
    return out


def strided_flows(transitions: np.ndarray, stride: int, first_frame_ref_only: bool = False) -> np.ndarray:
    """Raw stride-s consecutive flows from precomputed transitions: T x N x 2 x (T/s - 1)."""
    T = transitions.shape[0]
    frames = subsample_frames(T, stride)
    pos = transitions[:, frames]  # t, k, n, 2
    raw = (pos[:, 1:] - pos[:, :-1]).transpose(0, 2, 3, 1)
    if first_frame_ref_only:
        raw = np.broadcast_to(raw[:1], raw.shape).copy()
    return np.ascontiguousarray(raw)


def dense_flow(seq: FeatureSequence, stride: int = 1, gamma: float | None = DEFAULT_GAMMA,
               floor: float = DEFAULT_FLOOR, tau: float = DEFAULT_TAU, transitions: np.ndarray | None = None,
               first_frame_ref_only: bool = False) -> DenseFlow:
    """Thresholded stride-s patch flows for all reference frames.

    Frames ``0, s, 2s, ...`` of the sequence are used as the flow steps; all T
    frames still act as references. ``gamma=None`` disables thresholding.
    ``first_frame_ref_only`` replicates the frame-0 reference across T.
    """
    if transitions is None:
        subsample_frames(seq.T, stride)
        transitions = all_transitions(seq, tau)
    raw = strided_flows(transitions, stride, first_frame_ref_only)
    return DenseFlow(stride=stride, flows=threshold_flows(raw, gamma, floor), gamma=gamma, floor=floor,
                     meta={"tau": tau, "first_frame_ref_only": first_frame_ref_only})


def pairwise_flows(transitions: np.ndarray) -> np.ndarray:
    """Raw ``O[t, m] = G_hat[t -> t] - G_hat[t -> m]`` for all (t, m): T x T x N x 2."""
    T = transitions.shape[0]
    diag = transitions[np.arange(T), np.arange(T)]  # t, n, 2
    return diag[:, None] - transitions


def pairwise_flows_grid(transitions: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Variant of :func:`pairwise_flows` using G itself for the t -> t term."""
    return np.asarray(G, dtype=transitions.dtype)[None, None] - transitions


def pairwise_flow(seq: FeatureSequence, ref_t: int, m: int, tau: float = DEFAULT_TAU,
                  self_term: str = "transition") -> np.ndarray:
    """Raw flow of the reference frame's patches from frame m to frame ref_t: N x 2."""
    T = seq.T
    if not (0 <= ref_t < T and 0 <= m < T):
        raise IndexError(f"frames ({ref_t}, {m}) out of range for T={T}")
    F, G = seq.features, seq.grid
    at_m = transition_positions(F[ref_t], F[m], G, tau)
    if self_term == "grid":
        return G.astype(np.float64) - at_m
    return transition_positions(F[ref_t], F[ref_t], G, tau) - at_m


def write_flow_csv(path, flow: DenseFlow, grid_dims: tuple[int, int]) -> Path:
    """Vector-field dump with columns t, patch_x, patch_y, dx, dy.

    For reference frame t the row holds the flow of the step starting at the
    subsampled frame containing t (the last step for trailing frames).
    """
    path = Path(path)
    G = grid_coords(*grid_dims)
    T, N = flow.flows.shape[:2]
    L = flow.steps
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "patch_x", "patch_y", "dx", "dy"])
        for t in range(T):
            k = min(t // flow.stride, L - 1)
            for n in range(N):
                dx, dy = flow.flows[t, n, :, k]
                w.writerow([t, int(G[n, 0]), int(G[n, 1]), repr(float(dx)), repr(float(dy))])
    return path
