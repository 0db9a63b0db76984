import json
from dataclasses import replace

import pytest

from bmpkit import experiments
from bmpkit.experiments import (ABLATIONS, GeneralizationSetup, SplitSpec, ablation_setup, generalization_setup,
                                run_ablation, run_generalization, small_ablation_setup)
from bmpkit.featex import PatchDescriptorConfig
from bmpkit.fusion import ModelConfig

from test_acceptance import CACHE, RESULTS


def tiny_setup(**kw):
    base = dict(train_per_class=1, val_per_class=1, test_per_class=1, test_conditions=("RGB",), epochs=1,
                batch_size=6)
    base.update(kw)
    return GeneralizationSetup(**base)


def tiny_model(**kw):
    return ModelConfig(K=2, depth=1, strides=(4, 8), **kw)


def test_acceptance_setups_match_stated_sizes():
    g = generalization_setup()
    assert (g.train_per_class * 6, g.val_per_class * 6) == (600, 198)
    assert set(g.test_conditions) == {"RGB", "J-6P", "SP-8P-1LT"}
    a = ablation_setup()
    assert set(a.test_conditions) >= {"J-6P", "J-6P-S"}
    assert a.splits()[:2] == g.splits()[:2] and a.epochs == g.epochs
    assert ABLATIONS["min_off"] == {"use_min": False} and ABLATIONS["fsn_off"] == {"use_fsn": False}


def test_split_keys_depend_on_features_and_disjoint_items():
    s = SplitSpec(("RGB",), 10, 0)
    assert s.key(PatchDescriptorConfig(), 0.001) != s.key(PatchDescriptorConfig(projection="linear"), 0.001)
    assert s.key(PatchDescriptorConfig(), 0.001) != s.key(PatchDescriptorConfig(), 0.01)
    tr, va, te = generalization_setup().splits()
    assert tr.offset + tr.per_class <= va.offset and va.offset + va.per_class <= te.offset


@pytest.mark.slow
def test_result_reuse_requires_identical_configuration(tmp_path, monkeypatch):
    setup, cfg = tiny_setup(), tiny_model()
    first = run_generalization(setup, cfg, tmp_path / "cache", tmp_path / "run")
    assert set(first["accuracy"]) == {"RGB"}

    def no_training(*a, **k):
        raise AssertionError("should have reused the stored result")

    monkeypatch.setattr(experiments, "train", no_training)
    again = run_generalization(setup, cfg, tmp_path / "cache", tmp_path / "run", reuse=True)
    assert again == json.loads((tmp_path / "run" / "result.json").read_text())
    for changed in (dict(setup=tiny_setup(epochs=2), cfg=cfg), dict(setup=setup, cfg=replace(cfg, K=3)),
                    dict(setup=tiny_setup(feat=PatchDescriptorConfig(projection="linear")), cfg=cfg)):
        with pytest.raises(AssertionError, match="reused"):
            run_generalization(changed["setup"], changed["cfg"], tmp_path / "cache", tmp_path / "run", reuse=True)


@pytest.mark.slow
def test_temporal_augmentation_reduces_point_light_accuracy():
    res = run_ablation(small_ablation_setup(), ModelConfig(), CACHE, RESULTS / "ablation_small",
                       variants=("full", "temporal_aug"))
    full, aug = res["full"]["mean"]["J-6P"], res["temporal_aug"]["mean"]["J-6P"]
    assert aug < full, f"J-6P with temporal augmentation {aug:.3f} vs without {full:.3f}"
