"""Command-line entry points.

Every command takes an optional flat ``key = value`` config file
(``--config``) plus ``--set key=value`` overrides, and writes the effective
configuration to ``effective_config.txt`` in its output directory. Exit codes:
0 success, 1 user error (bad config, missing inputs), 2 internal invariant
violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .fusion import ModelConfig

log = logging.getLogger("bmpkit")


class UserError(Exception):
    pass


# -- run configuration ------------------------------------------------------------------

_RUN_DEFAULTS: dict[str, object] = {
    # data
    "data_dir": "bench",
    "features_dir": "features",
    "out_dir": "run",
    "checkpoint": "",
    "classes": 6,
    "per_class": 10,
    "data_seed": 0,
    "conditions": "all",
    "train_condition": "RGB",
    "val_fraction": 0.25,
    "test_fraction": 0.25,
    "frame_size": 224,
    "jobs": 1,
    # training
    "epochs": 40,
    "batch_size": 16,
    "lr": 1e-4,
    "weight_decay": 0.01,
    "train_seed": 0,
    # analysis
    "stride": 1,
    "video": "",
    "X_values": "1,2,4,8,16",
    "repeats": 200,
}
_MODEL_KEYS = {f.name: f for f in fields(ModelConfig)}
_CLASH = set(_RUN_DEFAULTS) & set(_MODEL_KEYS)
assert not _CLASH, _CLASH


def _parse_value(raw: str, like):
    raw = raw.strip()
    if isinstance(like, bool):
        low = raw.lower()
        if low in ("1", "true", "on", "yes"):
            return True
        if low in ("0", "false", "off", "no"):
            return False
        raise UserError(f"expected a boolean, got {raw!r}")
    try:
        if isinstance(like, tuple):
            return tuple(int(p) for p in raw.replace("x", ",").split(",") if p.strip())
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError:
        raise UserError(f"cannot read {raw!r} as {type(like).__name__}") from None
    return raw


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


@dataclass
class RunConfig:
    values: dict
    model: ModelConfig

    def __getitem__(self, key):
        return self.values[key]

    def echo(self) -> str:
        lines = ["# effective configuration"]
        for k in sorted(self.values):
            lines.append(f"{k} = {_fmt(self.values[k])}")
        for k, v in sorted(self.model.to_dict().items()):
            lines.append(f"{k} = {_fmt(tuple(v) if isinstance(v, list) else v)}")
        return "\n".join(lines) + "\n"

    def write_echo(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        p = d / "effective_config.txt"
        p.write_text(self.echo())
        return p


def parse_run_config(text: str = "", overrides=()) -> RunConfig:
    """Parse ``key = value`` lines (``#`` comments allowed); unknown keys are rejected."""
    values = dict(_RUN_DEFAULTS)
    model_defaults = ModelConfig().to_dict()
    model_vals = {}
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UserError(f"config line {lineno}: expected key = value, got {line!r}")
        pairs.append(tuple(s.strip() for s in line.split("=", 1)))
    for item in overrides:
        if "=" not in item:
            raise UserError(f"override {item!r} must be key=value")
        pairs.append(tuple(s.strip() for s in item.split("=", 1)))
    for key, raw in pairs:
        if key in values:
            values[key] = _parse_value(raw, _RUN_DEFAULTS[key])
        elif key in _MODEL_KEYS:
            like = model_defaults[key]
            model_vals[key] = _parse_value(raw, tuple(like) if isinstance(like, list) else like)
        else:
            raise UserError(f"unknown config key {key!r}")
    try:
        model = ModelConfig(**{**{k: (tuple(v) if isinstance(v, list) else v) for k, v in model_defaults.items()},
                               **model_vals})
    except (ValueError, TypeError) as exc:
        raise UserError(f"invalid model config: {exc}") from exc
    return RunConfig(values, model)


def load_run_config(path: str | None, overrides=()) -> RunConfig:
    text = ""
    if path:
        p = Path(path)
        if not p.exists():
            raise UserError(f"config file {p} does not exist")
        text = p.read_text()
    return parse_run_config(text, overrides)


# -- helpers -------------------------------------------------------------------------------


def _classes(rc: RunConfig):
    from .stimgen import ACTIONS

    c = rc["classes"]
    if isinstance(c, int) or str(c).isdigit():
        n = int(c)
        if not 1 <= n <= len(ACTIONS):
            raise UserError(f"classes must be between 1 and {len(ACTIONS)}")
        return ACTIONS[:n]
    names = tuple(s.strip() for s in str(c).split(",") if s.strip())
    bad = [n for n in names if n not in ACTIONS]
    if bad:
        raise UserError(f"unknown classes {bad}; choose from {ACTIONS}")
    return names


def _conditions(rc: RunConfig, available=None):
    from .stimgen import ALL_CONDITIONS, ConditionSpec

    c = rc["conditions"]
    if c == "all":
        conds = tuple(available) if available is not None else ALL_CONDITIONS
    else:
        conds = tuple(s.strip() for s in c.split(",") if s.strip())
    for name in conds:
        try:
            ConditionSpec.parse(name)
        except ValueError as exc:
            raise UserError(str(exc)) from exc
    return conds


def _manifest(rc: RunConfig) -> dict:
    from .stimgen import load_manifest

    p = Path(rc["data_dir"]) / "manifest.json"
    if not p.exists():
        raise UserError(f"no benchmark manifest at {p}; run `bmpkit gen` first")
    return load_manifest(p)


def _split_of(item: int, per_class: int, rc: RunConfig) -> str:
    n_test = int(round(per_class * rc["test_fraction"]))
    n_trainval = per_class - n_test
    n_val = int(round(n_trainval * rc["val_fraction"]))
    if item >= n_trainval:
        return "test"
    return "val" if item >= n_trainval - n_val else "train"


def _item_of(video_id: str) -> int:
    return int(video_id.rsplit("_", 1)[1])


def _feature_dataset(rc: RunConfig, entries: list[dict]):
    from .formats import read_features
    from .fusion import FlowDataset
    from .patchflow import all_transitions

    root = Path(rc["features_dir"])
    trs, labels, ids, conds = [], [], [], []
    for e in entries:
        p = root / (e["file"] + ".mpt")
        if not p.exists():
            raise UserError(f"missing features {p}; run `bmpkit featex` first")
        seq = read_features(p, e["file"])
        trs.append(all_transitions(seq, rc.model.tau).astype(np.float32))
        labels.append(e["label"])
        ids.append(e["file"])
        conds.append(e["condition"])
    if not trs:
        raise UserError("selection is empty")
    return FlowDataset(np.stack(trs), labels, ids, conds, tuple(seq.grid_dims))


# -- commands -----------------------------------------------------------------------------


def cmd_gen(rc: RunConfig) -> int:
    from .stimgen import build_benchmark

    out = Path(rc["data_dir"])
    m = build_benchmark(out, _classes(rc), rc["per_class"], rc["data_seed"], _conditions(rc),
                        T=rc.model.T, size=rc["frame_size"], jobs=rc["jobs"])
    rc.write_echo(out)
    print(out / "manifest.json")
    log.info("%d videos across %d conditions", len(m["videos"]), len(m["conditions"]))
    return 0


def _featex_one(args):
    from .featex import PatchDescriptorConfig, extract_features
    from .formats import write_features
    from .stimgen import read_video

    src, dst, grid = args
    try:
        frames_dir = Path(src)
        dst = Path(dst)
        pngs = sorted(frames_dir.glob("frame_*.png"))
        if dst.exists() and pngs and dst.stat().st_mtime >= max(f.stat().st_mtime for f in pngs):
            return "skipped", None
        frames = read_video(frames_dir)
        H, W = frames.shape[1:]
        if H % grid[0] or W % grid[1]:
            return "failed", f"frame size {H}x{W} not divisible by grid {grid}"
        seq = extract_features(frames, PatchDescriptorConfig(grid=tuple(grid)), frames_dir.name)
        dst.parent.mkdir(parents=True, exist_ok=True)
        write_features(dst, seq)
        return "written", None
    except Exception as exc:  # per-video failure; the run continues
        return "failed", f"{type(exc).__name__}: {exc}"


def cmd_featex(rc: RunConfig) -> int:
    from concurrent.futures import ProcessPoolExecutor

    m = _manifest(rc)
    root, out = Path(rc["data_dir"]), Path(rc["features_dir"])
    conds = set(_conditions(rc, m["conditions"]))
    entries = [e for e in m["videos"] if e["condition"] in conds]
    work = [(str(root / e["file"]), str(out / (e["file"] + ".mpt")), rc.model.grid) for e in entries]
    if rc["jobs"] > 1:
        with ProcessPoolExecutor(rc["jobs"]) as pool:
            results = list(pool.map(_featex_one, work, chunksize=4))
    else:
        results = [_featex_one(w) for w in work]
    index, failures = [], []
    for e, (status, err) in zip(entries, results):
        if status == "failed":
            failures.append({"file": e["file"], "error": err})
        else:
            index.append({**e, "features": e["file"] + ".mpt"})
    out.mkdir(parents=True, exist_ok=True)
    (out / "index.json").write_text(json.dumps({"videos": index, "failures": failures}, indent=1))
    rc.write_echo(out)
    counts = {s: sum(r[0] == s for r in results) for s in ("written", "skipped", "failed")}
    print(f"features: {counts['written']} written, {counts['skipped']} up to date, {counts['failed']} failed")
    for f in failures:
        print(f"  FAILED {f['file']}: {f['error']}", file=sys.stderr)
    return 1 if failures else 0


def cmd_train(rc: RunConfig) -> int:
    from .fusion import TrainConfig, train

    m = _manifest(rc)
    per = 0
    entries = [e for e in m["videos"] if e["condition"] == rc["train_condition"]]
    if not entries:
        raise UserError(f"no videos of condition {rc['train_condition']!r} in the manifest")
    per = max(_item_of(e["file"]) for e in entries) + 1
    tr = [e for e in entries if _split_of(_item_of(e["file"]), per, rc) == "train"]
    va = [e for e in entries if _split_of(_item_of(e["file"]), per, rc) == "val"]
    if not tr:
        raise UserError("training split is empty; increase per_class or lower the val/test fractions")
    n_classes = len(m["classes"])
    model_cfg = replace(rc.model, num_classes=n_classes)
    out = Path(rc["out_dir"])
    rc.write_echo(out)
    tcfg = TrainConfig(epochs=rc["epochs"], batch_size=rc["batch_size"], lr=rc["lr"],
                       weight_decay=rc["weight_decay"], seed=rc["train_seed"], log_every=1)
    res = train(_feature_dataset(rc, tr), _feature_dataset(rc, va) if va else None, model_cfg, tcfg, out)
    (out / "split.json").write_text(json.dumps({"train": [e["file"] for e in tr], "val": [e["file"] for e in va],
                                                "per_class": per}, indent=1))
    print(f"{res.checkpoint}  best epoch {res.best_epoch}  val accuracy {res.best_val_accuracy:.4f}")
    return 0


def _load_checkpoint(rc: RunConfig):
    from .formats import FormatError
    from .fusion import load_model

    ck = rc["checkpoint"] or str(Path(rc["out_dir"]) / "best.ckpt")
    if not Path(ck).exists():
        raise UserError(f"checkpoint {ck} does not exist")
    try:
        return load_model(ck)
    except FormatError as exc:
        raise UserError(str(exc)) from exc


def cmd_eval(rc: RunConfig) -> int:
    from .evalkit import condition_report, records_from_predictions
    from .fusion import evaluate

    model, manifest = _load_checkpoint(rc)
    m = _manifest(rc)
    conds = _conditions(rc, m["conditions"])
    per = max(_item_of(e["file"]) for e in m["videos"]) + 1
    entries = [e for e in m["videos"] if e["condition"] in conds and _split_of(_item_of(e["file"]), per, rc) == "test"]
    if not entries:
        raise UserError("no test videos for the requested conditions")
    ds = _feature_dataset(rc, entries)
    ev = evaluate(model, ds)
    report = condition_report(records_from_predictions(ds.ids, ds.conditions, ds.labels, ev["pred"]))
    out = Path(rc["out_dir"])
    report.write(out, "report")
    rc.write_echo(out)
    for r in report.rows:
        se = "" if r.stderr_across_classes is None else f" +- {r.stderr_across_classes:.3f}"
        print(f"{r.condition:12s} {r.accuracy:.3f}{se}  (n={r.n})")
    return 0


def cmd_gradcheck(rc: RunConfig) -> int:
    from .gradsuite import run_suite

    results = run_suite()
    ok = True
    print(f"{'check':34s} {'rel. error':>11s} {'tol':>7s}  result")
    for r in results:
        ok &= r.passed
        print(f"{r.name:34s} {r.error:11.2e} {r.tol:7.0e}  {'pass' if r.passed else 'FAIL'}")
    return 0 if ok else 2


def cmd_inspect_flows(rc: RunConfig) -> int:
    from .formats import read_features
    from .patchflow import dense_flow, write_flow_csv

    src = rc["video"]
    if not src or not Path(src).exists():
        raise UserError("set video = <features .mpt file> to inspect")
    seq = read_features(src)
    flow = dense_flow(seq, stride=rc["stride"], gamma=rc.model.effective_gamma, tau=rc.model.tau)
    out = Path(rc["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    p = write_flow_csv(out / f"flows_s{rc['stride']}.csv", flow, seq.grid_dims)
    rc.write_echo(out)
    print(p)
    return 0


def cmd_keyframes(rc: RunConfig) -> int:
    from .evalkit import keyframe_importance, model_score_fn
    from .formats import read_features
    from .patchflow import all_transitions

    model, _ = _load_checkpoint(rc)
    src = rc["video"]
    if not src or not Path(src).exists():
        raise UserError("set video = <features .mpt file> to analyse")
    seq = read_features(src)
    label = None
    idx = Path(rc["features_dir"]) / "index.json"
    if idx.exists():
        for e in json.loads(idx.read_text())["videos"]:
            if Path(rc["features_dir"], e["features"]).resolve() == Path(src).resolve():
                label = e["label"]
    tr = all_transitions(seq, model.cfg.tau)
    score = model_score_fn(model, tr)
    if label is None:
        label = int(np.argmax(score(np.arange(seq.T))))
    xs = [int(x) for x in str(rc["X_values"]).split(",") if x.strip()]
    res = keyframe_importance(score, seq.T, label, xs, rc["repeats"], rc["train_seed"])
    out = Path(rc["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    p = out / "keyframes.json"
    p.write_text(json.dumps({"video": src, **res}, indent=1))
    rc.write_echo(out)
    print(p)
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "featex": cmd_featex,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "inspect-flows": cmd_inspect_flows,
    "keyframes": cmd_keyframes,
}

_SHORTCUTS = {
    "out": "out_dir", "data": "data_dir", "features": "features_dir", "checkpoint": "checkpoint",
    "classes": "classes", "per_class": "per_class", "seed": "data_seed", "conditions": "conditions",
    "epochs": "epochs", "jobs": "jobs", "video": "video", "stride": "stride", "repeats": "repeats",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bmpkit", description="Point-light action recognition toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key")
        for flag in _SHORTCUTS:
            sp.add_argument(f"--{flag.replace('_', '-')}", dest=flag, default=None)
        if name == "train":
            sp.add_argument("--ablate", action="append", default=[], choices=["min", "fsn", "slots", "gamma"],
                            help="switch off one component")
    return p


_ABLATE = {"min": "use_min", "fsn": "use_fsn", "slots": "slots_enabled", "gamma": "gamma_enabled"}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = list(args.set)
    for flag, key in _SHORTCUTS.items():
        v = getattr(args, flag, None)
        if v is not None:
            overrides.append(f"{key}={v}")
    for a in getattr(args, "ablate", []):
        overrides.append(f"{_ABLATE[a]}=off")
    t0 = time.time()
    try:
        rc = load_run_config(args.config, overrides)
        code = COMMANDS[args.command](rc)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (AssertionError, FloatingPointError) as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    log.info("%s finished in %.1fs", args.command, time.time() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
