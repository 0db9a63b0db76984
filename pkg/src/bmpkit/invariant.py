"""Frame-order invariant motion magnitudes.

For every reference frame t and patch n, the raw pairwise flows from each
frame m to t are split into the positive parts along +x, -x, +y and -y and
averaged over all T frames (the m = t term is zero).
"""
from __future__ import annotations

import numpy as np

from .patchflow import DEFAULT_TAU, FeatureSequence, all_transitions, pairwise_flows, pairwise_flows_grid

COMPONENTS = ("+x", "-x", "+y", "-y")


def invariant_from_pairwise(pairwise: np.ndarray) -> np.ndarray:
    """``pairwise[t, m, n, xy]`` -> T x N x 4 directional magnitude averages."""
    if pairwise.ndim != 4 or pairwise.shape[0] < 2:
        raise ValueError(f"expected T x T x N x 2 pairwise flows with T >= 2, got {pairwise.shape}")
    T = pairwise.shape[1]
    dx, dy = pairwise[..., 0], pairwise[..., 1]
    comps = [np.maximum(dx, 0), np.maximum(-dx, 0), np.maximum(dy, 0), np.maximum(-dy, 0)]
    return np.stack([c.sum(axis=1) / T for c in comps], axis=-1)


def motion_invariant_matrix(seq: FeatureSequence, tau: float = DEFAULT_TAU,
                            transitions: np.ndarray | None = None, self_term: str = "transition") -> np.ndarray:
    """T x N x 4 matrix over components (+x, -x, +y, -y), built from unthresholded stride-1 flows."""
    if seq.T < 2:
        raise ValueError("need at least two frames")
    if transitions is None:
        transitions = all_transitions(seq, tau)
    if self_term == "grid":
        pw = pairwise_flows_grid(transitions, seq.grid)
    else:
        pw = pairwise_flows(transitions)
    return invariant_from_pairwise(pw)
