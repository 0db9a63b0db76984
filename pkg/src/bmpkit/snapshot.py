"""Flow snapshot neurons: competitive slot attention over dense patch flows.

A bank of K learnable slots per temporal stride is refined against a video's
flattened flows with P rounds of slot attention + GRU updates. Cosine
similarities between flows and refined slots are the snapshot activations;
a contrastive round-trip walk between slots and flows keeps slots diverse.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensorcore as tc
from .patchflow import adjacency
from .tensorcore import GRUCell, Linear, Module, Tensor


def slot_dim(T: int, stride: int) -> int:
    return 2 * (T // stride - 1)


def init_slots(K: int, D: int, seed: int) -> np.ndarray:
    """K x D Xavier-uniform slot base, bound sqrt(6 / (K + D))."""
    if K < 1 or D < 1:
        raise ValueError("K and D must be positive")
    rng = np.random.Generator(np.random.Philox(seed))
    a = math.sqrt(6.0 / (K + D))
    return rng.uniform(-a, a, size=(K, D))


class SlotBank(Module):
    """Slot base plus key/query/value projections and the GRU for one stride."""

    def __init__(self, stride: int, T: int = 32, K: int = 6, B: int = 64, iters: int = 3,
                 mu: float = 0.05, seed: int = 0, attn_scale: str = "D"):
        if attn_scale not in ("D", "B"):
            raise ValueError("attn_scale must be 'D' or 'B'")
        self.stride = stride
        self.T = T
        self.K = K
        self.D = slot_dim(T, stride)
        if self.D < 2:
            raise ValueError(f"stride {stride} leaves no flow steps for T={T}")
        self.B = B
        self.iters = iters
        self.mu = mu
        self.seed = seed
        self.attn_scale = attn_scale
        rng = np.random.Generator(np.random.Philox(seed + 1))
        self.slots = tc.parameter(init_slots(K, self.D, seed))
        self.k = Linear(self.D, B, rng, bias=False)
        self.q = Linear(self.D, B, rng, bias=False)
        self.v = Linear(self.D, B, rng, bias=False)
        self.gru = GRUCell(B, self.D, rng)

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.D if self.attn_scale == "D" else self.B)


@dataclass
class SlotTrace:
    attn: list[np.ndarray] = field(default_factory=list)
    U: list[np.ndarray] = field(default_factory=list)


def slot_attention(flows, bank: SlotBank, trace: SlotTrace | None = None) -> Tensor:
    """Refine the slot base against flattened flows.

    ``flows`` is S x D or batch x S x D. attn is a softmax over slots for each
    input row; U renormalises attn over inputs for each slot; the aggregated
    values ``U^T v(O)`` drive a GRU update of the slots. Returns K x D (or
    batch x K x D).
    """
    O = tc.as_tensor(flows)
    if O.shape[-1] != bank.D:
        raise ValueError(f"flow rows have width {O.shape[-1]}, bank expects {bank.D}")
    kO = bank.k(O)
    vO = bank.v(O)
    Z = bank.slots + np.zeros(O.shape[:-2] + (bank.K, bank.D), dtype=O.dtype)
    for _ in range(bank.iters):
        J = (kO @ bank.q(Z).T) * bank.scale  # ... x S x K
        attn = tc.softmax(J, axis=-1)
        U = attn / attn.sum(axis=-2, keepdims=True)
        h = U.T @ vO  # ... x K x B
        if trace is not None:
            trace.attn.append(attn.data.copy())
            trace.U.append(U.data.copy())
        Z = bank.gru(Z, h)
    return Z


def snapshot_activations(flows, slots) -> Tensor:
    """Cosine similarity of every flow row with every slot: ... x S x K."""
    return tc.l2_normalize(tc.as_tensor(flows)) @ tc.l2_normalize(tc.as_tensor(slots)).T


def walk_round_trip(flows, slots, mu: float = 0.05) -> Tensor:
    """Slot -> flow -> slot transition matrix ``Q(Z, O) Q(O, Z)``: ... x K x K."""
    if mu <= 0:
        raise ValueError("walk temperature must be positive")
    O = tc.as_tensor(flows)
    Z = tc.as_tensor(slots)
    return adjacency(Z, O, mu) @ adjacency(O, Z, mu)


def walk_loss(flows, slots, mu: float = 0.05) -> Tensor:
    """Mean over slots (and batch) of ``-log R_ii`` for the round-trip matrix R."""
    return tc.identity_cross_entropy(walk_round_trip(flows, slots, mu))
