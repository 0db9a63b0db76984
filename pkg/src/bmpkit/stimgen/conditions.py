"""Stimulus condition names and frame-order transforms.

Names follow ``[type]-[points]-[manipulation]``: ``RGB``, ``RGB-R``,
``J-6P``, ``J-6P-4F``, ``J-6P-90V``, ``SP-8P-2LT`` and so on.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, replace

import numpy as np

from .rng import philox

J_POINTS = (5, 6, 10, 14, 18, 26)
SP_POINTS = (4, 8)
SP_LIFETIMES = (1, 2, 4)
TEMPORAL_OPS = ("R", "S", "4F", "3F")
VIEWS = (0, 45, 90)


@dataclass(frozen=True)
class ConditionSpec:
    kind: str  # "RGB", "J" or "SP"
    P: int | None = None
    LT: int | None = None
    temporal: str | None = None
    view: int | None = None

    def __post_init__(self):
        if self.kind == "RGB":
            if self.P is not None or self.LT is not None or self.view is not None:
                raise ValueError("RGB conditions take only a temporal manipulation")
        elif self.kind == "J":
            if self.P not in J_POINTS:
                raise ValueError(f"J conditions need P in {J_POINTS}, got {self.P}")
            if self.LT is not None:
                raise ValueError("J conditions have no lifetime")
        elif self.kind == "SP":
            if self.P not in SP_POINTS or self.LT not in SP_LIFETIMES:
                raise ValueError(f"SP conditions need P in {SP_POINTS} and LT in {SP_LIFETIMES}")
            if self.temporal is not None or self.view is not None:
                raise ValueError("SP conditions take no temporal or view manipulation")
        else:
            raise ValueError(f"unknown stimulus type {self.kind!r}")
        if self.temporal is not None and self.temporal not in TEMPORAL_OPS:
            raise ValueError(f"unknown temporal manipulation {self.temporal!r}")
        if self.view is not None and self.view not in VIEWS:
            raise ValueError(f"view must be one of {VIEWS}")

    @classmethod
    def parse(cls, name: str) -> "ConditionSpec":
        m = re.fullmatch(r"RGB(?:-(R|S|4F|3F))?", name)
        if m:
            return cls("RGB", temporal=m.group(1))
        m = re.fullmatch(r"J-(\d+)P(?:-(R|S|4F|3F))?(?:-(\d+)V)?", name)
        if m:
            return cls("J", P=int(m.group(1)), temporal=m.group(2),
                       view=None if m.group(3) is None else int(m.group(3)))
        m = re.fullmatch(r"SP-(\d+)P-(\d+)LT", name)
        if m:
            return cls("SP", P=int(m.group(1)), LT=int(m.group(2)))
        raise ValueError(f"cannot parse condition name {name!r}")

    def format(self) -> str:
        if self.kind == "RGB":
            parts = ["RGB"]
        elif self.kind == "J":
            parts = ["J", f"{self.P}P"]
        else:
            return f"SP-{self.P}P-{self.LT}LT"
        if self.temporal:
            parts.append(self.temporal)
        if self.view is not None:
            parts.append(f"{self.view}V")
        return "-".join(parts)

    def __str__(self) -> str:
        return self.format()

    def base(self) -> "ConditionSpec":
        """The same condition without temporal manipulation."""
        return replace(self, temporal=None)


ALL_CONDITIONS = tuple(
    ["RGB"] + [f"RGB-{op}" for op in TEMPORAL_OPS]
    + [f"J-{p}P" for p in J_POINTS]
    + [f"J-6P-{op}" for op in TEMPORAL_OPS]
    + [f"J-6P-{v}V" for v in VIEWS]
    + [f"SP-{p}P-{lt}LT" for p in SP_POINTS for lt in SP_LIFETIMES]
)


def downsample_indices(T: int, k: int) -> np.ndarray:
    return np.array([int(round(i * (T - 1) / (k - 1))) for i in range(k)])


def replication_counts(T: int, k: int) -> np.ndarray:
    counts = np.full(k, int(round(T / k)))
    counts[-1] = T - counts[:-1].sum()
    return counts


def frame_order(op: str, T: int, seed: int = 0, k: int | None = None) -> np.ndarray:
    """Source-frame index for every output frame.

    ``op`` is ``reverse``, ``shuffle`` or ``downsample`` (with ``k``); the
    short forms R, S, 4F and 3F are accepted too.
    """
    short = {"R": ("reverse", None), "S": ("shuffle", None), "4F": ("downsample", 4), "3F": ("downsample", 3)}
    if op in short:
        op, k = short[op]
    if op == "reverse":
        return np.arange(T)[::-1].copy()
    if op == "shuffle":
        return philox(seed).permutation(T)
    if op == "downsample":
        if k not in (3, 4):
            raise ValueError("downsample needs k in {3, 4}")
        return np.repeat(downsample_indices(T, k), replication_counts(T, k))
    raise ValueError(f"unknown temporal op {op!r}")


def temporal_transform(x, op: str, seed: int = 0, k: int | None = None):
    """Apply a frame-order transform to an array, PoseSequence or PointLightVideo."""
    if isinstance(x, np.ndarray):
        return x[frame_order(op, x.shape[0], seed, k)]
    T = x.T
    order = frame_order(op, T, seed, k)
    return x.reorder(order)
