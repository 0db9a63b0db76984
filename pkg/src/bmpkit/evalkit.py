"""Accuracy tables, human-alignment metrics and key-frame importance."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .stimgen.conditions import ConditionSpec


class Undefined(ValueError):
    """A metric has no value for the given input (e.g. empty set, zero variance)."""


@dataclass(frozen=True)
class TrialRecord:
    video_id: str
    condition: str
    label: int
    pred: int

    def __post_init__(self):
        ConditionSpec.parse(self.condition)

    @property
    def correct(self) -> bool:
        return self.label == self.pred


def records_from_predictions(ids, conditions, labels, preds) -> list[TrialRecord]:
    return [TrialRecord(str(i), str(c), int(y), int(p)) for i, c, y, p in zip(ids, conditions, labels, preds)]


def top1_accuracy(records) -> float:
    records = list(records)
    if not records:
        raise Undefined("top-1 accuracy of an empty record set is undefined")
    return sum(r.correct for r in records) / len(records)


def pearson_correlation(x, y, method: str = "pearson") -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d vectors of equal length")
    if len(x) < 3:
        raise ValueError("need at least 3 paired values")
    if method == "spearman":
        x, y = stats.rankdata(x), stats.rankdata(y)
    elif method != "pearson":
        raise ValueError(f"unknown correlation method {method!r}")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise Undefined("correlation is undefined when either vector has zero variance")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def error_consistency(a, b) -> float:
    """Chance-corrected agreement of two observers' correct/incorrect patterns."""
    a, b = list(a), list(b)
    ma = {r.video_id: r.correct for r in a}
    mb = {r.video_id: r.correct for r in b}
    if set(ma) != set(mb) or len(ma) != len(a) or len(mb) != len(b) or not ma:
        raise ValueError("error consistency needs two record sets over the same, nonempty trial ids")
    ids = sorted(ma)
    ca = np.array([ma[i] for i in ids], dtype=bool)
    cb = np.array([mb[i] for i in ids], dtype=bool)
    c_obs = float((ca == cb).mean())
    pa, pb = ca.mean(), cb.mean()
    c_exp = float(pa * pb + (1 - pa) * (1 - pb))
    if c_exp == 1.0:
        if c_obs == 1.0:
            return 1.0
        raise Undefined("expected agreement is 1 but observed agreement is not")
    return (c_obs - c_exp) / (1.0 - c_exp)


# -- condition tables ---------------------------------------------------------------


@dataclass(frozen=True)
class ConditionRow:
    condition: str
    accuracy: float
    stderr_across_classes: float | None
    n: int


@dataclass
class ConditionReport:
    rows: list[ConditionRow]

    def __getitem__(self, condition: str) -> ConditionRow:
        for r in self.rows:
            if r.condition == condition:
                return r
        raise KeyError(condition)

    def __eq__(self, other) -> bool:
        return isinstance(other, ConditionReport) and self.rows == other.rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["condition", "accuracy", "stderr_across_classes", "n"])
        for r in self.rows:
            se = "" if r.stderr_across_classes is None else repr(r.stderr_across_classes)
            w.writerow([r.condition, repr(r.accuracy), se, r.n])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ConditionReport":
        rows = []
        for rec in csv.DictReader(io.StringIO(text)):
            se = rec["stderr_across_classes"]
            rows.append(ConditionRow(rec["condition"], float(rec["accuracy"]), float(se) if se else None,
                                     int(rec["n"])))
        return cls(rows)

    def to_json(self) -> str:
        return json.dumps({"rows": [asdict(r) for r in self.rows]}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ConditionReport":
        return cls([ConditionRow(**r) for r in json.loads(text)["rows"]])

    def write(self, directory, stem: str = "report") -> tuple[Path, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        pc, pj = d / f"{stem}.csv", d / f"{stem}.json"
        pc.write_text(self.to_csv())
        pj.write_text(self.to_json())
        return pc, pj

    def accuracies(self) -> dict[str, float]:
        return {r.condition: r.accuracy for r in self.rows}


def condition_report(records) -> ConditionReport:
    """One row per condition, in first-seen order.

    The standard error is taken over per-class accuracies (sample std / sqrt
    of the class count) and is left empty when only one class is present.
    """
    groups: dict[str, list[TrialRecord]] = {}
    for r in records:
        groups.setdefault(r.condition, []).append(r)
    if not groups:
        raise ValueError("condition report needs at least one record")
    rows = []
    for cond, recs in groups.items():
        per_class: dict[int, list[bool]] = {}
        for r in recs:
            per_class.setdefault(r.label, []).append(r.correct)
        accs = np.array([np.mean(v) for v in per_class.values()])
        se = float(accs.std(ddof=1) / math.sqrt(len(accs))) if len(accs) > 1 else None
        rows.append(ConditionRow(cond, top1_accuracy(recs), se, len(recs)))
    return ConditionReport(rows)


def load_reference(path) -> dict[str, float]:
    """Externally supplied accuracies keyed by condition name."""
    ref = json.loads(Path(path).read_text())
    for k in ref:
        ConditionSpec.parse(k)
    return {k: float(v) for k, v in ref.items()}


def correlate_with_reference(report: ConditionReport, reference: dict[str, float], method: str = "pearson"
                             ) -> float:
    common = [r.condition for r in report.rows if r.condition in reference]
    return pearson_correlation([report[c].accuracy for c in common], [reference[c] for c in common], method)


# -- key frames ----------------------------------------------------------------------


def replace_frames(order_len: int, drop) -> np.ndarray:
    """Frame index map where each dropped frame shows its nearest kept predecessor.

    A dropped first frame shows the nearest kept successor instead; with every
    frame dropped but one, all frames show that one.
    """
    T = order_len
    drop = set(int(d) for d in drop)
    if len(drop) >= T:
        raise ValueError("at least one frame must survive")
    src = np.arange(T)
    last = None
    for t in range(T):
        if t in drop:
            if last is not None:
                src[t] = last
        else:
            last = t
    kept = [t for t in range(T) if t not in drop]
    first_kept = kept[0]
    for t in range(first_kept):
        src[t] = first_kept
    return src


def keyframe_importance(score_fn, T: int, label: int, X_values=(1, 2, 4, 8, 16), repeats: int = 200,
                        seed: int = 0) -> dict:
    """Average drop in the true-class score attributed to each replaced frame.

    ``score_fn(src)`` scores the video whose frame t shows source frame
    ``src[t]`` and returns the class-score vector. The importance of frame t
    is the mean drop over all trials in which t was replaced.
    """
    base = float(np.asarray(score_fn(np.arange(T)))[label])
    totals = np.zeros(T)
    counts = np.zeros(T)
    per_x = {}
    for X in X_values:
        X = int(X)
        if not 0 <= X <= T - 1:
            raise ValueError(f"X must be in [0, {T - 1}], got {X}")
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), X])))
        drops = []
        for _ in range(repeats if X > 0 else 0):
            chosen = rng.choice(T, size=X, replace=False)
            drop = base - float(np.asarray(score_fn(replace_frames(T, chosen)))[label])
            drops.append(drop)
            totals[chosen] += drop
            counts[chosen] += 1
        per_x[X] = float(np.mean(drops)) if drops else 0.0
    importance = np.divide(totals, counts, out=np.zeros(T), where=counts > 0)
    return {"importance": importance.tolist(), "mean_drop_per_X": per_x, "base_score": base,
            "repeats": repeats, "label": int(label)}


def model_score_fn(model, transitions: np.ndarray):
    """Class probabilities of ``model`` on a frame-remapped video.

    Frame remapping acts on cached transitions directly, since the transition
    between output frames a and b is the one between their source frames.
    """
    from .fusion.data import collate, permute_transitions, video_inputs
    from .fusion.train import forward_logits
    from .tensorcore import softmax_np

    def score(src):
        batch = collate([video_inputs(permute_transitions(transitions, src), model.cfg)])
        return softmax_np(forward_logits(model, batch)["fuse"][0], axis=-1)

    return score
