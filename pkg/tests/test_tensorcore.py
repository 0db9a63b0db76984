import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bmpkit import tensorcore as tc
from bmpkit.tensorcore import (AdamW, AttentionBlock, GRUCell, NonFiniteError, OptimizerState, Tensor, adamw_step,
                               cosine_lr, cross_entropy, grad_check, identity_cross_entropy, l2_normalize_np,
                               precision, softmax_np, softmax_rows, time_embedding)

finite = st.floats(-50, 50, allow_nan=False, width=64)


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


# -- graph mechanics ---------------------------------------------------------------


def test_backward_accumulates_on_shared_inputs():
    x = Tensor(np.array([2.0, -1.0]), requires_grad=True)
    y = (x * x + x * 3.0).sum()
    y.backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 3.0, rtol=1e-6)


def test_non_requires_grad_leaf_gets_no_gradient():
    a = Tensor(np.ones(3), requires_grad=True)
    b = Tensor(np.ones(3))
    (a * b).sum().backward()
    assert a.grad is not None
    assert b.grad is None


def test_diamond_graph_visits_each_node_once():
    # z = (x+x) used twice: dz/dx must count both paths exactly once each
    x = Tensor(np.array([1.5]), requires_grad=True)
    u = x + x
    z = (u * u).sum()
    z.backward()
    assert x.grad[0] == pytest.approx(8 * 1.5)


def test_non_finite_forward_raises():
    with pytest.raises(NonFiniteError):
        tc.log(Tensor(np.array([0.0, 1.0])) - 0.0)


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(2), requires_grad=True)
    with tc.no_grad():
        y = x * 2.0
    assert not y.requires_grad


# -- l2 normalisation and softmax ------------------------------------------------------------


def test_l2_normalize_examples():
    np.testing.assert_allclose(l2_normalize_np(np.array([[3.0, 4.0]])), [[0.6, 0.8]])
    np.testing.assert_allclose(l2_normalize_np(np.array([[1.0, 0.0]])), [[1.0, 0.0]])
    x = rng(1).standard_normal((5, 7))
    norms = np.linalg.norm(l2_normalize_np(x), axis=1)
    np.testing.assert_allclose(norms, np.ones(5), atol=1e-6)


def test_l2_normalize_zero_row_passthrough():
    x = np.array([[0.0, 0.0], [3.0, 4.0]])
    out = l2_normalize_np(x)
    np.testing.assert_array_equal(out[0], [0.0, 0.0])
    t = Tensor(x, requires_grad=True, dtype=np.float64)
    tc.l2_normalize(t).sum().backward()
    np.testing.assert_array_equal(t.grad[0], [0.0, 0.0])


def test_softmax_rows_examples():
    e = math.e
    np.testing.assert_allclose(softmax_rows(np.array([[1.0, 0.0]]), 1.0), [[e / (e + 1), 1 / (e + 1)]], atol=1e-12)
    assert softmax_rows(np.array([[1.0, 0.0]]), 1.0)[0, 0] == pytest.approx(0.7311, abs=1e-4)
    np.testing.assert_allclose(softmax_rows(np.full((1, 3), 2.5), 0.01), [[1 / 3] * 3])
    sharp = softmax_rows(np.array([[1.0, 0.0]]), 0.001)
    np.testing.assert_allclose(sharp, [[1.0, 0.0]], atol=1e-6)


def test_softmax_rejects_nonpositive_temperature():
    with pytest.raises(ValueError):
        softmax_np(np.zeros((2, 2)), tau=0.0)
    with pytest.raises(ValueError):
        tc.softmax(Tensor(np.zeros((2, 2))), tau=-1.0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 6), elements=finite), st.floats(1e-4, 10.0))
def test_softmax_rows_are_stochastic(x, tau):
    p = softmax_rows(x, tau)
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=1), np.ones(4), atol=1e-6)


# -- GRU ---------------------------------------------------------------------------------


def _zero_gru(d_in=3, d_h=2):
    g = GRUCell(d_in, d_h, rng(0))
    for p in g.parameters().values():
        p.data[...] = 0.0
    return g


def test_gru_zero_weights_halves_hidden_state():
    g = _zero_gru()
    h0 = np.array([[1.0, -2.0], [0.5, 4.0]], dtype=np.float32)
    out = g(Tensor(h0), Tensor(np.ones((2, 3), np.float32)))
    # z = 0.5, candidate tanh(0) = 0 -> 0.5 * h0
    np.testing.assert_allclose(out.data, 0.5 * h0, atol=1e-7)


def test_gru_saturated_update_gate_carries_hidden_state():
    g = _zero_gru()
    d = 2
    g.b_x.data[d : 2 * d] = 40.0  # update-gate bias: z -> 1
    h0 = np.array([[0.3, -0.7]], dtype=np.float32)
    out = g(Tensor(h0), Tensor(rng(1).standard_normal((1, 3)).astype(np.float32)))
    np.testing.assert_allclose(out.data, h0, atol=1e-6)


def test_gru_shape_mismatch():
    g = GRUCell(3, 2, rng(0))
    with pytest.raises(ValueError):
        g(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 4))))


def test_gru_gradient_small_instance():
    with precision(np.float64):
        g = GRUCell(3, 3, rng(2)).astype(np.float64)
        x = rng(3).standard_normal((2, 3))
        h = rng(4).standard_normal((2, 3))
        assert grad_check(lambda a, b: (g(a, b) * 1.3).sum(), [h, x]) <= 1e-5


# -- attention block -----------------------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 7))
def test_attention_block_is_permutation_equivariant(seed, S):
    with precision(np.float64):
        blk = AttentionBlock(4, rng(seed)).astype(np.float64)
        x = rng(seed + 1).standard_normal((S, 4))
        perm = rng(seed + 2).permutation(S)
        np.testing.assert_allclose(blk(Tensor(x[perm])).data, blk(Tensor(x)).data[perm], atol=1e-6)


def test_attention_single_token_weight_is_one():
    blk = AttentionBlock(4, rng(0))
    w = blk.attention_weights(Tensor(rng(1).standard_normal((1, 4)).astype(np.float32)))
    np.testing.assert_allclose(w.data, [[1.0]])


def test_cross_entropy_of_attention_block_gradient():
    with precision(np.float64):
        blk = AttentionBlock(4, rng(5)).astype(np.float64)
        x = rng(6).standard_normal((3, 4))
        assert grad_check(lambda a: cross_entropy(blk(a), np.array([0, 3, 1])), x) <= 1e-5


# -- time embedding --------------------------------------------------------------------------


def test_time_embedding_values():
    E = time_embedding(5, 6)
    np.testing.assert_allclose(E[0], [0, 1, 0, 1, 0, 1])
    np.testing.assert_allclose(E[1, :2], [math.sin(1), math.cos(1)])
    assert E[1, 0] == pytest.approx(0.8415, abs=1e-4) and E[1, 1] == pytest.approx(0.5403, abs=1e-4)
    # pair i uses frequency 10000^(2i/d)
    assert E[3, 4] == pytest.approx(math.sin(3 / 10000 ** (4 / 6)))


def test_time_embedding_rows_distinct_and_even_width():
    E = time_embedding(200, 8)
    d = np.linalg.norm(E[:, None] - E[None], axis=-1) + np.eye(200)
    assert d.min() > 1e-6
    with pytest.raises(ValueError):
        time_embedding(4, 5)


# -- losses ---------------------------------------------------------------------------------


def test_cross_entropy_uniform_and_margin():
    assert cross_entropy(Tensor(np.zeros((3, 6))), np.array([0, 2, 5])).item() == pytest.approx(math.log(6), rel=1e-6)
    losses = []
    for m in (1.0, 5.0, 20.0):
        logits = np.zeros((1, 6))
        logits[0, 2] = m
        losses.append(cross_entropy(Tensor(logits), np.array([2])).item())
    assert losses[0] > losses[1] > losses[2] >= 0 and losses[2] < 1e-7


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


def test_identity_cross_entropy_of_identity_is_zero():
    assert identity_cross_entropy(Tensor(np.eye(4))).item() == pytest.approx(0.0, abs=1e-9)


# -- optimiser -------------------------------------------------------------------------------


def test_adamw_zero_gradient_decays_only():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True, dtype=np.float64)
    st_ = OptimizerState(base_lr=1e-2, weight_decay=0.01, total_steps=10)
    adamw_step({"p": p}, st_, {"p": np.zeros(2)})
    np.testing.assert_allclose(p.data, np.array([1.0, -2.0]) * (1 - 1e-2 * 0.01))
    assert st_.step == 1


def test_adamw_constant_gradient_update_tends_to_lr():
    # decay off; with constant g the bias-corrected ratio m_hat/sqrt(v_hat) is exactly 1
    p = Tensor(np.array([0.0]), requires_grad=True, dtype=np.float64)
    lr = 1e-3
    st_ = OptimizerState(base_lr=lr, weight_decay=0.0, total_steps=10**9)
    prev = 0.0
    for _ in range(50):
        adamw_step({"p": p}, st_, {"p": np.array([0.37])})
        step = prev - p.data[0]
        prev = p.data[0]
    assert step == pytest.approx(lr * 0.37 / (0.37 + 1e-8), rel=1e-6)


def test_adamw_bitwise_deterministic():
    def run():
        params = {"w": Tensor(np.linspace(-1, 1, 5), requires_grad=True, dtype=np.float64)}
        opt = AdamW(params, lr=1e-2, total_steps=20)
        for k in range(20):
            params["w"].grad = np.sin(params["w"].data * (k + 1))
            opt.step()
        return params["w"].data.tobytes()

    assert run() == run()


def test_cosine_schedule():
    S = 100
    lrs = [cosine_lr(s, 1e-4, S) for s in range(S + 5)]
    assert lrs[0] == 1e-4
    assert abs(lrs[S]) < 1e-12
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


# -- grad_check itself -----------------------------------------------------------------------


def test_grad_check_square():
    assert grad_check(lambda a: (a * a).sum(), np.array([3.0])) <= 1e-8


def test_grad_check_dead_branch_has_zero_gradient():
    x = np.array([-1.0, -0.5, 0.7, 2.0])
    t = Tensor(x, requires_grad=True, dtype=np.float64)
    tc.relu(t).sum().backward()
    np.testing.assert_array_equal(t.grad[:2], [0.0, 0.0])
    assert grad_check(lambda a: tc.relu(a).sum(), x) <= 1e-8


def test_grad_check_reports_non_finite_as_failure():
    assert grad_check(lambda a: tc.log(a - 5.0).sum(), np.array([1.0])) == math.inf


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_trainable_ops_pass_grad_check_on_random_instances(seed):
    r = rng(seed)
    with precision(np.float64):
        lin = tc.Linear(3, 2, r).astype(np.float64)
        x = r.standard_normal((4, 3))
        assert grad_check(lambda a: (tc.gelu(lin(a)) * 0.7).sum(), x, stencil=5) <= 1e-5
        w, b = r.standard_normal(3), r.standard_normal(3)
        assert grad_check(lambda a, g, c: (tc.layer_norm(a, g, c) ** 2).sum(), [x, w, b], stencil=5) <= 1e-5
