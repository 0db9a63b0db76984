import hashlib
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from bmpkit.cli import UserError, main, parse_run_config
from bmpkit.formats import (CheckpointMismatch, FormatError, decode_checkpoint, decode_mpt, encode_checkpoint,
                            encode_mpt, read_features, write_features)
from bmpkit.patchflow import FeatureSequence

# -- MPT container ------------------------------------------------------------------------


def test_mpt_hex_example():
    blob = encode_mpt(np.arange(6, dtype=np.float32).reshape(2, 3))
    expected = bytes.fromhex(
        "4d505431" "01" "02" "0200000000000000" "0300000000000000"
        "00000000" "0000803f" "00000040" "00004040" "00008040" "0000a040")
    assert blob == expected
    assert encode_mpt(np.array([1.5])).hex() == "4d5054310201" "0100000000000000" "000000000000f83f"


@settings(max_examples=60, deadline=None)
@given(arrays(st.sampled_from([np.float32, np.float64, np.dtype(">f8")]), array_shapes(min_dims=0, max_dims=4,
                                                                                        max_side=5)))
def test_mpt_round_trip_bitwise(x):
    y = decode_mpt(encode_mpt(x))
    assert y.shape == x.shape
    assert y.astype(x.dtype.newbyteorder("=")).tobytes() == x.astype(x.dtype.newbyteorder("=")).tobytes()
    header = 4 + 2 + 8 * x.ndim
    assert len(encode_mpt(x)) == header + x.dtype.itemsize * x.size


def test_mpt_rejects_bad_input():
    with pytest.raises(FormatError):
        decode_mpt(b"NOPE" + bytes(10))
    good = encode_mpt(np.zeros(4, np.float32))
    with pytest.raises(FormatError):
        decode_mpt(good[:-1])
    with pytest.raises(FormatError):
        decode_mpt(good[:4] + b"\x07" + good[5:])
    with pytest.raises((FormatError, TypeError, ValueError)):
        encode_mpt(np.zeros(3, np.int32))


def test_feature_file_round_trip(tmp_path):
    feats = np.random.Generator(np.random.Philox(0)).standard_normal((4, 6, 3)).astype(np.float32)
    seq = FeatureSequence(feats, (2, 3), "x")
    p = write_features(tmp_path / "f.mpt", seq)
    back = read_features(p)
    assert back.grid_dims == (2, 3)
    assert back.features.tobytes() == feats.astype(back.features.dtype).tobytes()


def test_checkpoint_container_layout_and_round_trip():
    tensors = {"b": np.ones(2), "a.w": np.arange(3, dtype=np.float32)}
    blob = encode_checkpoint(tensors, {"note": 1})
    assert blob[:4] == b"MPCK" and struct.unpack("<I", blob[4:8])[0] == 1
    n = struct.unpack("<I", blob[8:12])[0]
    manifest = json.loads(blob[12 : 12 + n])
    assert manifest["note"] == 1 and manifest["tensors"] == ["a.w", "b"]
    back, man = decode_checkpoint(blob)
    assert set(back) == {"a.w", "b"}
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])
    bad_version = blob[:4] + struct.pack("<I", 99) + blob[8:]
    with pytest.raises(FormatError):
        decode_checkpoint(bad_version)
    assert issubclass(CheckpointMismatch, FormatError)


# -- run config ---------------------------------------------------------------------------


def test_run_config_parse_and_echo():
    rc = parse_run_config("epochs = 3  # short run\nK = 4\nuse_min = off\nstrides = 1,2\n", ["lr=0.5"])
    assert rc["epochs"] == 3 and rc["lr"] == 0.5
    assert rc.model.K == 4 and rc.model.use_min is False and rc.model.strides == (1, 2)
    echo = rc.echo()
    again = parse_run_config(echo.replace("# effective configuration", ""))
    assert again.values == rc.values and again.model == rc.model


@pytest.mark.parametrize("text", ["bogus = 1", "K = many", "use_min = maybe", "just a line", "use_min = off\nuse_fsn = off"])
def test_run_config_rejects(text):
    with pytest.raises(UserError):
        parse_run_config(text)


def test_defaults_match_model_hyperparameters():
    rc = parse_run_config()
    assert (rc.model.tau, rc.model.gamma, rc.model.K, rc.model.mu, rc.model.alpha) == (0.001, 0.2, 6, 0.05, 10.0)
    assert rc["epochs"] == 40 and rc["batch_size"] == 16


# -- commands -----------------------------------------------------------------------------


def _tree(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode() + p.read_bytes())
    return h.hexdigest()


@pytest.mark.slow
def test_pipeline_smoke(tmp_path, capsys):
    d = tmp_path
    common = ["--data", str(d / "bench"), "--features", str(d / "feats")]
    assert main(["gen", *common, "--classes", "2", "--per-class", "4", "--conditions", "RGB,J-6P"]) == 0
    man = json.loads((d / "bench" / "manifest.json").read_text())
    assert len(man["videos"]) == 2 * 2 * 4
    assert sum(v["condition"] == "RGB" for v in man["videos"]) == 8
    assert (d / "bench" / "effective_config.txt").exists()
    assert main(["gen", "--data", str(d / "bench2"), "--classes", "2", "--per-class", "4",
                 "--conditions", "RGB,J-6P"]) == 0
    assert _tree(d / "bench" / "RGB") == _tree(d / "bench2" / "RGB")

    assert main(["featex", *common]) == 0
    f = read_features(next((d / "feats" / "RGB").glob("*.mpt")))
    assert f.features.shape[:2] == (32, 196)
    capsys.readouterr()
    assert main(["featex", *common]) == 0
    assert "16 up to date" in capsys.readouterr().out

    out = d / "run"
    assert main(["train", *common, "--out", str(out), "--epochs", "1", "--set", "K=2", "--set", "depth=1",
                 "--ablate", "min"]) == 0
    assert json.loads((out / "model_config.json").read_text())["use_min"] is False
    from bmpkit.formats import load_checkpoint

    _, manifest = load_checkpoint(out / "best.ckpt")
    assert manifest["model_config"]["use_min"] is False
    assert main(["eval", *common, "--out", str(out)]) == 0
    csv = (out / "report.csv").read_text().splitlines()
    assert csv[0] == "condition,accuracy,stderr_across_classes,n" and len(csv) == 3
    assert (out / "effective_config.txt").exists()

    video = str(next((d / "feats" / "J-6P").glob("*.mpt")))
    assert main(["inspect-flows", "--video", video, "--out", str(d / "insp"), "--stride", "2"]) == 0
    assert (d / "insp" / "flows_s2.csv").read_text().startswith("t,patch_x,patch_y,dx,dy")
    assert main(["keyframes", *common, "--video", video, "--out", str(out), "--repeats", "2",
                 "--set", "X_values=1,3"]) == 0
    assert len(json.loads((out / "keyframes.json").read_text())["importance"]) == 32

    # a corrupt frame is reported and the run exits nonzero
    vid_dir = d / "bench" / man["videos"][0]["file"]
    (vid_dir / "frame_005.png").write_bytes(b"not a png")
    assert main(["featex", *common]) == 1
    index = json.loads((d / "feats" / "index.json").read_text())
    assert [x["file"] for x in index["failures"]] == [man["videos"][0]["file"]]


def test_user_errors_exit_one(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none")]) == 1
    assert main(["eval", "--out", str(tmp_path)]) == 1
    assert main(["gen", "--set", "nonsense=1"]) == 1
    assert main(["inspect-flows", "--video", str(tmp_path / "missing.mpt")]) == 1


@pytest.mark.slow
def test_gradcheck_command_passes(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "end_to_end_loss" in out
