"""Two-pathway classifier over snapshot activations and invariant motion magnitudes.

Token layout, both pathways: stage 1 runs self-attention across channel
tokens (4K slot channels, or 4 motion components) whose features are the N
patch values of one frame, then mean-pools the tokens; stage 2 runs
self-attention across the T frame tokens and mean-pools over time. Only the
snapshot pathway adds sinusoidal time embeddings, so the invariant pathway
stays exactly frame-order invariant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensorcore as tc
from ..snapshot import SlotBank, slot_attention, snapshot_activations, walk_loss
from ..tensorcore import AttentionBlock, Linear, Module, NonFiniteError, Tensor, cross_entropy
from .config import ModelConfig


class LossDivergence(FloatingPointError):
    def __init__(self, term: str, detail: str = ""):
        super().__init__(f"non-finite loss term {term!r} {detail}".strip())
        self.term = term


@dataclass
class Output:
    flow: Tensor | None
    invar: Tensor | None
    fuse: Tensor
    slot_loss: Tensor | None
    f_fsn: Tensor | None
    f_min: Tensor | None

    def prediction(self) -> np.ndarray:
        return self.fuse.data.argmax(axis=-1)


def _stage(tokens: Tensor, blocks) -> Tensor:
    for blk in blocks:
        tokens = blk(tokens)
    return tokens.mean(axis=-2)


class MotionPerceiver(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        N = cfg.N
        self.n_fsn = N + N % 2
        rng = np.random.Generator(np.random.Philox(cfg.seed))
        self.banks = []
        if cfg.use_fsn and cfg.slots_enabled:
            self.banks = [SlotBank(s, cfg.T, cfg.K, cfg.B, cfg.iters, cfg.mu, seed=cfg.seed * 1000 + 17 * i,
                                   attn_scale=cfg.attn_scale)
                          for i, s in enumerate(cfg.active_strides)]
        if cfg.use_fsn:
            self.fsn_stage1 = [AttentionBlock(N, rng) for _ in range(cfg.depth)]
            self.fsn_stage2 = [AttentionBlock(self.n_fsn, rng) for _ in range(cfg.depth)]
            self.flow_head = Linear(self.n_fsn, cfg.num_classes, rng)
        if cfg.use_min:
            self.min_stage1 = [AttentionBlock(N, rng) for _ in range(cfg.depth)]
            self.min_stage2 = [AttentionBlock(N, rng) for _ in range(cfg.depth)]
            self.invar_head = Linear(N, cfg.num_classes, rng)
        self.fuse_head = Linear(self.n_fsn + N, cfg.num_classes, rng)

    # -- pathways ---------------------------------------------------------------

    def snapshot_channels(self, flows: dict, refine: bool = True):
        """Per-stride activations concatenated on the channel axis: (Bt, T, N, C), plus L_slot."""
        cfg = self.cfg
        chans, losses = [], []
        if cfg.slots_enabled:
            for bank in self.banks:
                f = flows[bank.stride]
                Bt, T, N = f.shape[:3]
                O = f.reshape(Bt, T * N, -1)
                Z = slot_attention(O, bank) if refine else bank.slots + np.zeros((Bt, bank.K, bank.D), O.dtype)
                chans.append(snapshot_activations(O, Z).reshape(Bt, T, N, bank.K))
                if cfg.slot_loss:
                    losses.append(walk_loss(O, Z, cfg.mu))
        else:
            for s in cfg.active_strides:
                f = flows[s]
                Bt, T, N = f.shape[:3]
                chans.append(Tensor(f.reshape(Bt, T, N, -1)))
        act = tc.concat(chans, axis=-1) if len(chans) > 1 else chans[0]
        l_slot = None
        if losses:
            l_slot = losses[0]
            for extra in losses[1:]:
                l_slot = l_slot + extra
            l_slot = l_slot * (1.0 / len(losses))
        return act, l_slot

    def fsn_features(self, act: Tensor) -> Tensor:
        Bt, T, N, C = act.shape
        tok = act.transpose(0, 1, 3, 2).reshape(Bt * T, C, N)
        x = _stage(tok, self.fsn_stage1).reshape(Bt, T, N)
        x = tc.pad_last(x, self.n_fsn - N)
        if self.cfg.time_embedding:
            x = x + tc.time_embedding(T, self.n_fsn).astype(x.dtype)
        return _stage(x, self.fsn_stage2)

    def min_features(self, inv) -> Tensor:
        inv = tc.as_tensor(inv)
        Bt, T, N, C = inv.shape
        tok = inv.transpose(0, 1, 3, 2).reshape(Bt * T, C, N)
        x = _stage(tok, self.min_stage1).reshape(Bt, T, N)
        return _stage(x, self.min_stage2)

    # -- full forward -----------------------------------------------------------

    def __call__(self, batch: dict, train: bool = False) -> Output:
        cfg = self.cfg
        refine = train or cfg.inference_refine
        flow_logits = invar_logits = l_slot = f_fsn = f_min = None
        if cfg.use_fsn:
            act, l_slot = self.snapshot_channels(batch["flows"], refine)
            f_fsn = self.fsn_features(act)
            flow_logits = self.flow_head(f_fsn)
            Bt = f_fsn.shape[0]
        if cfg.use_min:
            f_min = self.min_features(batch["invariant"])
            invar_logits = self.invar_head(f_min)
            Bt = f_min.shape[0]
        dtype = (f_fsn if f_fsn is not None else f_min).dtype
        a = f_fsn if f_fsn is not None else Tensor(np.zeros((Bt, self.n_fsn), dtype), dtype=dtype)
        b = f_min if f_min is not None else Tensor(np.zeros((Bt, cfg.N), dtype), dtype=dtype)
        fuse = self.fuse_head(tc.concat([a, b], axis=-1))
        return Output(flow_logits, invar_logits, fuse, l_slot, f_fsn, f_min)


def total_loss(out: Output, labels, cfg: ModelConfig) -> tuple[Tensor, dict[str, float]]:
    """``alpha * L_slot + L_flow + L_invar + L_fuse``; disabled terms contribute 0."""
    terms: dict[str, Tensor] = {}
    if out.slot_loss is not None and cfg.slot_loss:
        terms["slot"] = out.slot_loss
    for name, logits in (("flow", out.flow), ("invar", out.invar), ("fuse", out.fuse)):
        if logits is None:
            continue
        try:
            terms[name] = cross_entropy(logits, labels)
        except NonFiniteError as exc:
            raise LossDivergence(name, str(exc)) from exc
    for name, t in terms.items():
        if not np.isfinite(t.data).all():
            raise LossDivergence(name)
    total = None
    for name, t in terms.items():
        w = cfg.alpha if name == "slot" else 1.0
        if w == 0:
            continue
        total = t * w if total is None else total + t * w
    breakdown = {name: t.item() for name, t in terms.items()}
    for name in ("slot", "flow", "invar", "fuse"):
        breakdown.setdefault(name, 0.0)
    breakdown["total"] = total.item()
    return total, breakdown
