"""Model inputs derived from cached patch transitions.

The flows are not learned, so each video is reduced once to its transition
tensor ``G_hat`` (T x T x N x 2). Every flow variant the model needs, including
the frame-permuted ones used for temporal augmentation, is an exact function
of that tensor: permuting frames permutes both of its leading axes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..invariant import invariant_from_pairwise
from ..patchflow import (FeatureSequence, all_transitions, grid_coords, pairwise_flows, pairwise_flows_grid,
                         strided_flows, threshold_flows)
from .config import ModelConfig


def permute_transitions(transitions: np.ndarray, order) -> np.ndarray:
    order = np.asarray(order)
    return transitions[order][:, order]


def video_inputs(transitions: np.ndarray, cfg: ModelConfig) -> dict:
    """Per-video arrays: ``flows[s]`` (T x N x 2 x L) and ``invariant`` (T x N x 4)."""
    tr = np.asarray(transitions, dtype=np.float64)
    out = {"flows": {}}
    if cfg.use_fsn:
        for s in cfg.active_strides:
            raw = strided_flows(tr, s, cfg.first_frame_ref_only)
            out["flows"][s] = threshold_flows(raw, cfg.effective_gamma, cfg.floor)
    if cfg.use_min:
        if cfg.pairwise_self_term == "grid":
            pw = pairwise_flows_grid(tr, grid_coords(*cfg.grid))
        else:
            pw = pairwise_flows(tr)
        out["invariant"] = invariant_from_pairwise(pw)
    return out


def collate(items: list[dict], dtype=np.float32) -> dict:
    batch = {"flows": {}}
    for s in items[0]["flows"]:
        batch["flows"][s] = np.stack([it["flows"][s] for it in items]).astype(dtype)
    if "invariant" in items[0]:
        batch["invariant"] = np.stack([it["invariant"] for it in items]).astype(dtype)
    return batch


def augment_order(T: int, rng: np.random.Generator) -> np.ndarray:
    """Identity, reversal or shuffle with equal probability."""
    mode = int(rng.integers(0, 3))
    if mode == 0:
        return np.arange(T)
    if mode == 1:
        return np.arange(T)[::-1].copy()
    return rng.permutation(T)


@dataclass
class FlowDataset:
    transitions: np.ndarray  # V x T x T x N x 2
    labels: np.ndarray
    ids: list[str]
    conditions: list[str] = field(default_factory=list)
    grid: tuple[int, int] = (14, 14)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) != len(self.transitions) or len(self.ids) != len(self.labels):
            raise ValueError("transitions, labels and ids must align")
        if not self.conditions:
            self.conditions = [""] * len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "FlowDataset":
        idx = np.asarray(idx)
        return FlowDataset(self.transitions[idx], self.labels[idx], [self.ids[i] for i in idx],
                           [self.conditions[i] for i in idx], self.grid)

    def batch(self, idx, cfg: ModelConfig, rng: np.random.Generator | None = None) -> dict:
        items = []
        for i in idx:
            tr = self.transitions[i]
            if rng is not None:
                tr = permute_transitions(tr, augment_order(tr.shape[0], rng))
            items.append(video_inputs(tr, cfg))
        return collate(items)

    @classmethod
    def from_sequences(cls, seqs: list[FeatureSequence], labels, conditions=None, tau: float = 0.001,
                       dtype=np.float32) -> "FlowDataset":
        tr = np.stack([all_transitions(s, tau).astype(dtype) for s in seqs])
        return cls(tr, np.asarray(labels), [s.video_id for s in seqs], list(conditions or []),
                   tuple(seqs[0].grid_dims))

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        np.save(d / "transitions.npy", np.ascontiguousarray(self.transitions))
        meta = {"labels": self.labels.tolist(), "ids": self.ids, "conditions": self.conditions,
                "grid": list(self.grid)}
        (d / "meta.json").write_text(json.dumps(meta))
        return d

    @classmethod
    def load(cls, directory, mmap: bool = True) -> "FlowDataset":
        d = Path(directory)
        meta = json.loads((d / "meta.json").read_text())
        tr = np.load(d / "transitions.npy", mmap_mode="r" if mmap else None)
        return cls(tr, np.asarray(meta["labels"]), meta["ids"], meta["conditions"], tuple(meta["grid"]))
