import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmpkit.featex import translation_fixture
from bmpkit.invariant import COMPONENTS, invariant_from_pairwise, motion_invariant_matrix
from bmpkit.patchflow import FeatureSequence, all_transitions, pairwise_flows


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


def test_component_order():
    assert COMPONENTS == ("+x", "-x", "+y", "-y")


def test_three_frame_scalar_example():
    # one patch, reference frame t = 2; x-flows from m = 0, 1, 2 are +0.5, -0.3, 0
    pw = np.zeros((3, 3, 1, 2))
    pw[2, :, 0, 0] = [0.5, -0.3, 0.0]
    out = invariant_from_pairwise(pw)[2, 0]
    plus = sum(max(v, 0.0) for v in (0.5, -0.3, 0.0)) / 3
    minus = sum(max(-v, 0.0) for v in (0.5, -0.3, 0.0)) / 3
    assert out[0] == pytest.approx(plus, abs=1e-12) and out[0] == pytest.approx(0.1667, abs=1e-4)
    assert out[1] == pytest.approx(minus, abs=1e-12) and out[1] == pytest.approx(0.1000, abs=1e-12)
    assert out[2] == out[3] == 0.0


def test_static_video_is_exactly_zero():
    f = rng(0).standard_normal((9, 6))
    seq = FeatureSequence(np.stack([f] * 5), (3, 3))
    assert np.all(motion_invariant_matrix(seq) == 0.0)


def test_x_translation_only_fills_plus_x_for_late_frames():
    fx = translation_fixture(14, 14, 6, (1, 0), seed=1)
    M = motion_invariant_matrix(fx.sequence)
    # frames after the start: the object moved +x relative to all earlier frames
    t = 5
    obj = fx.object_indices(t)
    assert (M[t, obj, 0] > 0).all()
    # reference frame t = T-1 sees only earlier frames, so no backwards motion at all
    np.testing.assert_allclose(M[t, obj, 1:], 0.0, atol=1e-6)
    np.testing.assert_allclose(M[:, :, 2:], 0.0, atol=1e-6)


def test_too_short_raises():
    with pytest.raises(ValueError):
        motion_invariant_matrix(FeatureSequence(np.ones((1, 4, 2)), (2, 2)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_frame_permutation_equivariance(seed):
    r = rng(seed)
    feats = r.standard_normal((6, 9, 8))
    perm = r.permutation(6)
    M = motion_invariant_matrix(FeatureSequence(feats, (3, 3)), tau=0.05)
    Mp = motion_invariant_matrix(FeatureSequence(feats[perm], (3, 3)), tau=0.05)
    np.testing.assert_allclose(Mp, M[perm], atol=1e-6)
    np.testing.assert_allclose(Mp.mean(axis=0), M.mean(axis=0), atol=1e-12)
    assert (M >= 0).all()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_sign_exclusivity_per_term(seed):
    r = rng(seed)
    pw = pairwise_flows(all_transitions(FeatureSequence(r.standard_normal((4, 4, 5)), (2, 2)), 0.1))
    for m in range(4):
        # contribution of a single source frame
        single = np.zeros_like(pw)
        single[:, m] = pw[:, m]
        c = invariant_from_pairwise(single)
        assert not np.any((c[..., 0] > 0) & (c[..., 1] > 0))
        assert not np.any((c[..., 2] > 0) & (c[..., 3] > 0))


def test_grid_self_term_variant_matches_definition():
    seq = FeatureSequence(rng(3).standard_normal((4, 4, 3)), (2, 2))
    tr = all_transitions(seq, 0.3)
    M = motion_invariant_matrix(seq, 0.3, transitions=tr, self_term="grid")
    oracle = np.zeros((4, 4, 4))
    for t in range(4):
        for m in range(4):
            d = seq.grid - tr[t, m]
            oracle[t, :, 0] += np.maximum(d[:, 0], 0) / 4
            oracle[t, :, 1] += np.maximum(-d[:, 0], 0) / 4
            oracle[t, :, 2] += np.maximum(d[:, 1], 0) / 4
            oracle[t, :, 3] += np.maximum(-d[:, 1], 0) / 4
    np.testing.assert_allclose(M, oracle, atol=1e-12)
