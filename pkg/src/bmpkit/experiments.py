"""Desk-scale experiments: zero-shot generalization and ablation direction.

Datasets are cached on disk keyed by a hash of everything that determines
them, so repeated runs only pay for training. Result files are plain JSON.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .featex import PatchDescriptorConfig
from .fusion import FlowDataset, ModelConfig, TrainConfig, evaluate, train
from .pipeline import dataset_from_plans
from .stimgen import ACTIONS, plan_videos

log = logging.getLogger(__name__)

CHANCE = 1.0 / len(ACTIONS)


@dataclass(frozen=True)
class SplitSpec:
    conditions: tuple[str, ...]
    per_class: int
    offset: int
    seed: int = 0

    def key(self, feat_cfg: PatchDescriptorConfig, tau: float) -> str:
        blob = json.dumps({"split": asdict(self), "feat": asdict(feat_cfg), "tau": tau, "v": 2}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def cached_dataset(split: SplitSpec, cache_dir, feat_cfg: PatchDescriptorConfig | None = None,
                   tau: float = 0.001, jobs: int = 1) -> FlowDataset:
    feat_cfg = feat_cfg or PatchDescriptorConfig()
    d = Path(cache_dir) / split.key(feat_cfg, tau)
    if (d / "meta.json").exists():
        return FlowDataset.load(d)
    t0 = time.time()
    plans = plan_videos(ACTIONS, split.per_class, split.seed, split.conditions, offset=split.offset)
    ds = dataset_from_plans(plans, feat_cfg, tau, jobs)
    ds.save(d)
    (d / "split.json").write_text(json.dumps(asdict(split)))
    log.info("built %s (%d videos) in %.0fs", d.name, len(ds), time.time() - t0)
    return FlowDataset.load(d)


def by_condition(ds: FlowDataset) -> dict[str, np.ndarray]:
    conds = np.asarray(ds.conditions)
    return {c: np.nonzero(conds == c)[0] for c in dict.fromkeys(ds.conditions)}


@dataclass
class GeneralizationSetup:
    train_per_class: int = 100
    val_per_class: int = 33
    test_per_class: int = 33
    test_conditions: tuple[str, ...] = ("RGB", "J-6P", "SP-8P-1LT")
    data_seed: int = 0
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3
    feat: PatchDescriptorConfig = field(default_factory=PatchDescriptorConfig)

    def splits(self) -> tuple[SplitSpec, SplitSpec, SplitSpec]:
        tr = SplitSpec(("RGB",), self.train_per_class, 0, self.data_seed)
        va = SplitSpec(("RGB",), self.val_per_class, self.train_per_class, self.data_seed)
        te = SplitSpec(tuple(self.test_conditions), self.test_per_class,
                       self.train_per_class + self.val_per_class, self.data_seed)
        return tr, va, te


def generalization_setup() -> GeneralizationSetup:
    """Acceptance-size run: 600 train / 198 val RGB-like videos, 33 test videos per class and condition."""
    return GeneralizationSetup(train_per_class=100, val_per_class=33, test_per_class=33, epochs=6)


def ablation_setup() -> GeneralizationSetup:
    """Acceptance-size data and budget shared by every ablation variant, tested on J-6P and J-6P-S."""
    return replace(generalization_setup(), test_conditions=("J-6P", "J-6P-S"))


def small_ablation_setup() -> GeneralizationSetup:
    """A quicker shared budget: 30 train / 10 val videos per class, 8 epochs."""
    return GeneralizationSetup(train_per_class=30, val_per_class=10, test_per_class=33,
                               test_conditions=("J-6P", "J-6P-S"), epochs=8)


def _setup_dict(setup: GeneralizationSetup) -> dict:
    d = asdict(setup)
    d["test_conditions"] = list(d["test_conditions"])
    return {k: v for k, v in d.items() if k != "feat"}


def _matching_result(path: Path, setup: GeneralizationSetup, model_cfg: ModelConfig, train_seed: int):
    if not path.exists():
        return None
    r = json.loads(path.read_text())
    want = json.loads(json.dumps({"model_config": model_cfg.to_dict(), "setup": _setup_dict(setup),
                                  "feat": asdict(setup.feat), "train_seed": train_seed}))
    same = all(r.get(k) == v for k, v in want.items())
    return r if same else None


def run_generalization(setup: GeneralizationSetup, model_cfg: ModelConfig, cache_dir, out_dir=None,
                       train_seed: int = 0, jobs: int = 1, reuse: bool = False) -> dict:
    """Train on RGB-like renders, report top-1 on every test condition.

    With ``reuse`` an existing ``out_dir/result.json`` produced by the identical
    setup, features, model config and seed is returned without retraining.
    """
    if reuse and out_dir is not None:
        prior = _matching_result(Path(out_dir) / "result.json", setup, model_cfg, train_seed)
        if prior is not None:
            log.info("reusing %s", Path(out_dir) / "result.json")
            return prior
    tr_s, va_s, te_s = setup.splits()
    train_set = cached_dataset(tr_s, cache_dir, setup.feat, model_cfg.tau, jobs)
    val_set = cached_dataset(va_s, cache_dir, setup.feat, model_cfg.tau, jobs)
    test_set = cached_dataset(te_s, cache_dir, setup.feat, model_cfg.tau, jobs)
    tcfg = TrainConfig(epochs=setup.epochs, batch_size=setup.batch_size, lr=setup.lr, seed=train_seed, log_every=1)
    t0 = time.time()
    res = train(train_set, val_set, model_cfg, tcfg, out_dir)
    train_seconds = time.time() - t0
    ev = evaluate(res.model, test_set, setup.batch_size)
    acc = {}
    for cond, idx in by_condition(test_set).items():
        acc[cond] = float((ev["pred"][idx] == test_set.labels[idx]).mean())
    out = {"accuracy": acc, "best_epoch": res.best_epoch, "best_val_accuracy": res.best_val_accuracy,
           "train_seconds": train_seconds, "model_config": model_cfg.to_dict(), "train_seed": train_seed,
           "setup": _setup_dict(setup), "feat": asdict(setup.feat),
           "history": [{k: v for k, v in h.items() if k != "train_predictions"} for h in res.history],
           "predictions": {vid: int(p) for vid, p in zip(test_set.ids, ev["pred"])}}
    if out_dir is not None:
        Path(out_dir, "result.json").write_text(json.dumps(out, indent=1))
    return out


ABLATIONS = {
    "full": {},
    "min_off": {"use_min": False},
    "fsn_off": {"use_fsn": False},
    "temporal_aug": {"temporal_augmentation": True},
}


def run_ablation(setup: GeneralizationSetup, base: ModelConfig, cache_dir, out_dir, seeds=(0, 1, 2),
                 variants=("full", "min_off", "fsn_off"), jobs: int = 1) -> dict:
    """Same data, seeds and budget for each variant; accuracies averaged over seeds."""
    results: dict[str, dict] = {}
    for name in variants:
        per_seed = []
        for s in seeds:
            cfg = replace(base, seed=s, **ABLATIONS[name])
            d = Path(out_dir) / f"{name}_seed{s}"
            r = run_generalization(setup, cfg, cache_dir, d, train_seed=s, jobs=jobs, reuse=True)
            per_seed.append(r["accuracy"])
        conds = per_seed[0].keys()
        results[name] = {"per_seed": per_seed, "mean": {c: float(np.mean([p[c] for p in per_seed])) for c in conds}}
    summary = Path(out_dir, "ablation.json")
    summary.parent.mkdir(parents=True, exist_ok=True)
    merged = json.loads(summary.read_text()) if summary.exists() else {}
    merged.update(results)
    summary.write_text(json.dumps(merged, indent=1))
    return results
