"""Glue from stimulus plans to cached transition datasets."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .featex import PatchDescriptorConfig, extract_features
from .fusion.data import FlowDataset
from .patchflow import all_transitions
from .stimgen import VideoPlan


def plan_transitions(plan: VideoPlan, feat_cfg: PatchDescriptorConfig | None = None, tau: float = 0.001
                     ) -> np.ndarray:
    seq = extract_features(plan.render(), feat_cfg, plan.video_id)
    return all_transitions(seq, tau).astype(np.float32)


def _work(args):
    return plan_transitions(*args)


def dataset_from_plans(plans: list[VideoPlan], feat_cfg: PatchDescriptorConfig | None = None,
                       tau: float = 0.001, jobs: int = 1) -> FlowDataset:
    """Render, describe and reduce every planned video to its transition tensor."""
    cfg = feat_cfg or PatchDescriptorConfig()
    work = [(p, cfg, tau) for p in plans]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            trs = list(pool.map(_work, work, chunksize=2))
    else:
        trs = [_work(w) for w in work]
    return FlowDataset(np.stack(trs), [p.label for p in plans], [p.video_id for p in plans],
                       [p.condition for p in plans], tuple(cfg.grid))
