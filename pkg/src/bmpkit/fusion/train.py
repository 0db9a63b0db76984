"""Training, evaluation and checkpoint-based prediction."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..formats import CheckpointMismatch, load_checkpoint, save_checkpoint
from ..tensorcore import NonFiniteError, OptimizerState, adamw_step, no_grad
from .config import ModelConfig, TrainConfig
from .data import FlowDataset, collate, video_inputs
from .model import LossDivergence, MotionPerceiver, total_loss

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, term: str, dump: Path | None):
        where = f"; last batch dumped to {dump}" if dump else ""
        super().__init__(f"loss diverged in term {term!r}{where}")
        self.term, self.dump = term, dump


@dataclass
class TrainResult:
    model: MotionPerceiver
    history: list[dict] = field(default_factory=list)
    steps: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = float("nan")
    checkpoint: Path | None = None
    best_state: dict | None = None


def _rng(*key) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


def checkpoint_manifest(model: MotionPerceiver, extra: dict | None = None) -> dict:
    man = {"model_config": model.cfg.to_dict(), "config_hash": model.cfg.digest(),
           "heads": "independent flow/invar heads; fuse head over concatenated pathway features"}
    if extra:
        man.update(extra)
    return man


def save_model(path, model: MotionPerceiver, extra: dict | None = None) -> Path:
    return save_checkpoint(path, model.state(), checkpoint_manifest(model, extra))


def load_model(path, expected: ModelConfig | None = None) -> tuple[MotionPerceiver, dict]:
    """Rebuild a model from a checkpoint; a differing ``expected`` config is refused."""
    tensors, manifest = load_checkpoint(path)
    cfg = ModelConfig.from_dict(manifest["model_config"])
    if cfg.digest() != manifest["config_hash"]:
        raise CheckpointMismatch(manifest["config_hash"], cfg.digest())
    if expected is not None and expected.digest() != manifest["config_hash"]:
        raise CheckpointMismatch(expected.digest(), manifest["config_hash"])
    model = MotionPerceiver(cfg)
    model.load_state(tensors)
    return model, manifest


def forward_logits(model: MotionPerceiver, batch: dict) -> dict[str, np.ndarray]:
    with no_grad():
        out = model(batch, train=False)
    res = {"fuse": out.fuse.data.copy()}
    if out.flow is not None:
        res["flow"] = out.flow.data.copy()
    if out.invar is not None:
        res["invar"] = out.invar.data.copy()
    return res


def evaluate(model: MotionPerceiver, ds: FlowDataset, batch_size: int = 16) -> dict:
    """Fuse-head predictions and logits for every video, in dataset order."""
    logits = []
    for start in range(0, len(ds), batch_size):
        idx = np.arange(start, min(start + batch_size, len(ds)))
        logits.append(forward_logits(model, ds.batch(idx, model.cfg))["fuse"])
    fuse = np.concatenate(logits) if logits else np.zeros((0, model.cfg.num_classes))
    pred = fuse.argmax(axis=-1)
    acc = float((pred == ds.labels).mean()) if len(ds) else float("nan")
    return {"pred": pred, "logits": fuse, "accuracy": acc}


def _dump_batch(out_dir: Path | None, batch: dict, labels, idx, note: str) -> Path | None:
    if out_dir is None:
        return None
    path = out_dir / "divergence_dump.npz"
    arrays = {f"flows_{s}": v for s, v in batch["flows"].items()}
    if "invariant" in batch:
        arrays["invariant"] = batch["invariant"]
    np.savez(path, labels=np.asarray(labels), indices=np.asarray(idx), **arrays)
    (out_dir / "divergence.json").write_text(json.dumps({"note": note, "indices": [int(i) for i in idx]}))
    return path


def train(train_set: FlowDataset, val_set: FlowDataset | None, model_cfg: ModelConfig,
          train_cfg: TrainConfig = TrainConfig(), out_dir=None) -> TrainResult:
    """Minibatch AdamW with a cosine schedule; keeps the best validation-accuracy state.

    Shuffling and augmentation streams are keyed by (seed, epoch), so a run is
    a pure function of data, configs and seed.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "model_config.json").write_text(json.dumps(model_cfg.to_dict(), indent=1, sort_keys=True))
        (out / "train_config.json").write_text(json.dumps(train_cfg.__dict__, indent=1, sort_keys=True))
        for name in ("epochs.jsonl", "steps.jsonl"):
            (out / name).write_text("")
    model = MotionPerceiver(model_cfg)
    params = model.parameters()
    n = len(train_set)
    bs = train_cfg.batch_size
    per_epoch = -(-n // bs)
    opt = OptimizerState(base_lr=train_cfg.lr, weight_decay=train_cfg.weight_decay,
                         total_steps=per_epoch * train_cfg.epochs)
    res = TrainResult(model)
    best = -1.0
    for epoch in range(train_cfg.epochs):
        t0 = time.time()
        order = _rng(train_cfg.seed, epoch, 0).permutation(n)
        aug = _rng(train_cfg.seed, epoch, 1) if model_cfg.temporal_augmentation else None
        sums: dict[str, float] = {}
        correct = 0
        for b in range(per_epoch):
            idx = np.sort(order[b * bs : (b + 1) * bs])
            batch = train_set.batch(idx, model_cfg, aug)
            labels = train_set.labels[idx]
            lr = opt.lr
            try:
                output = model(batch, train=True)
                loss, terms = total_loss(output, labels, model_cfg)
            except (LossDivergence, NonFiniteError) as exc:
                term = exc.term if isinstance(exc, LossDivergence) else "forward"
                raise TrainingDiverged(term, _dump_batch(out, batch, labels, idx, str(exc))) from exc
            model.zero_grad()
            loss.backward()
            adamw_step(params, opt)
            correct += int((output.prediction() == labels).sum())
            step_rec = {"epoch": epoch, "step": opt.step, "lr": lr, **terms}
            res.steps.append(step_rec)
            if out is not None:
                with open(out / "steps.jsonl", "a") as fh:
                    fh.write(json.dumps(step_rec) + "\n")
            for k, v in terms.items():
                sums[k] = sums.get(k, 0.0) + v * len(idx)
        rec = {"epoch": epoch, "train_loss": sums["total"] / n,
               **{f"train_{k}": v / n for k, v in sums.items() if k != "total"},
               "train_accuracy_running": correct / n}
        if val_set is not None and len(val_set):
            ev = evaluate(model, val_set, bs)
            rec["val_accuracy"] = ev["accuracy"]
        else:
            rec["val_accuracy"] = rec["train_accuracy_running"]
        if train_cfg.record_train_predictions:
            tr = evaluate(model, train_set, bs)
            rec["train_accuracy"] = tr["accuracy"]
            rec["train_predictions"] = {vid: int(p) for vid, p in zip(train_set.ids, tr["pred"])}
        rec["seconds"] = time.time() - t0
        improved = rec["val_accuracy"] > best
        if improved:
            best = rec["val_accuracy"]
            res.best_epoch, res.best_val_accuracy = epoch, best
            res.best_state = model.state()
            if out is not None:
                res.checkpoint = save_model(out / "best.ckpt", model, {"epoch": epoch, "val_accuracy": best})
        rec["best"] = improved
        res.history.append(rec)
        if out is not None:
            with open(out / "epochs.jsonl", "a") as fh:
                fh.write(json.dumps(rec) + "\n")
        if train_cfg.log_every and (epoch % train_cfg.log_every == 0 or epoch == train_cfg.epochs - 1):
            log.info("epoch %d loss %.4f val %.3f (%.1fs)", epoch, rec["train_loss"], rec["val_accuracy"],
                     rec["seconds"])
    if res.best_state is not None:
        model.load_state(res.best_state)
    return res


def predict(transitions: np.ndarray, checkpoint, expected: ModelConfig | None = None) -> dict:
    """Label and per-head logits for one video's transition tensor (T x T x N x 2)."""
    model, _ = (checkpoint, None) if isinstance(checkpoint, MotionPerceiver) else load_model(checkpoint, expected)
    if expected is not None and isinstance(checkpoint, MotionPerceiver) and expected.digest() != model.cfg.digest():
        raise CheckpointMismatch(expected.digest(), model.cfg.digest())
    batch = collate([video_inputs(transitions, model.cfg)])
    logits = {k: v[0] for k, v in forward_logits(model, batch).items()}
    return {"label": int(logits["fuse"].argmax()), "logits": logits}
