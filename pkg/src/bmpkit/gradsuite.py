"""Registered finite-difference checks for every differentiable operation.

Each check contracts the op's output with a fixed random weight tensor so
that all output coordinates contribute to the scalar being differentiated.
Op-level checks must reach 1e-5 relative error; the end-to-end loss on the
miniature model must reach 1e-4. All checks use the five-point stencil.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensorcore as tc
from .tensorcore import Tensor, precision
from .tensorcore import grad_check as _grad_check
from .tensorcore import grad_check_params as _grad_check_params

OP_TOL = 1e-5
E2E_TOL = 1e-4
STENCIL = 5


def grad_check(f, x, **kw) -> float:
    return _grad_check(f, x, stencil=STENCIL, **kw)


def grad_check_params(f, params, **kw) -> dict[str, float]:
    return _grad_check_params(f, params, stencil=STENCIL, **kw)


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error <= self.tol


_REGISTRY: list[tuple[str, Callable[[], float], float]] = []


def register(name: str, tol: float = OP_TOL):
    def deco(fn):
        _REGISTRY.append((name, fn, tol))
        return fn
    return deco


def registered() -> list[str]:
    return [n for n, _, _ in _REGISTRY]


def _rng(k: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(1000 + k))


def _contract(out: Tensor, k: int = 99) -> Tensor:
    w = _rng(k).standard_normal(out.shape)
    return (out * w).sum()


def _unary(fn, x) -> Callable[[], float]:
    return lambda: grad_check(lambda a: _contract(fn(a)), x)


def _away_from_zero(shape, k: int = 0) -> np.ndarray:
    x = _rng(k).standard_normal(shape)
    return np.where(np.abs(x) < 0.1, 0.5, x)


# -- elementwise and structural ops -----------------------------------------------------

_X = _rng(1).standard_normal((3, 4))
_Y = _rng(2).standard_normal((3, 4))
_ROW = _rng(3).standard_normal((4,))

register("add_broadcast")(lambda: grad_check(lambda a, b: _contract(a + b), [_X, _ROW]))
register("sub")(lambda: grad_check(lambda a, b: _contract(a - b), [_X, _Y]))
register("mul_broadcast")(lambda: grad_check(lambda a, b: _contract(a * b), [_X, _ROW]))
register("div")(lambda: grad_check(lambda a, b: _contract(a / b), [_X, _away_from_zero((3, 4), 4) + 3.0]))
register("neg")(_unary(lambda a: -a, _X))
register("power")(_unary(lambda a: tc.tensor.power(a, 3.0), _X))
register("exp")(_unary(tc.exp, _X))
register("log")(_unary(tc.log, np.abs(_X) + 0.5))
register("sqrt")(_unary(tc.tensor.sqrt, np.abs(_X) + 0.5))
register("tanh")(_unary(tc.tanh, _X))
register("sigmoid")(_unary(tc.sigmoid, _X))
register("relu")(_unary(tc.relu, _away_from_zero((3, 4), 5)))
register("gelu")(_unary(tc.gelu, _X))
register("sum_axis")(_unary(lambda a: a.sum(axis=0), _X))
register("mean_keepdims")(_unary(lambda a: a.mean(axis=-1, keepdims=True), _X))
register("reshape")(_unary(lambda a: a.reshape(2, 6), _X))
register("transpose")(_unary(lambda a: a.reshape(3, 2, 2).transpose(2, 0, 1), _X))
register("getitem_basic")(_unary(lambda a: a[1:, ::2], _X))
register("getitem_advanced")(_unary(lambda a: a[np.array([0, 2, 2]), np.array([1, 1, 3])], _X))
register("concat")(lambda: grad_check(lambda a, b: _contract(tc.concat([a, b], axis=1)), [_X, _Y]))
register("stack")(lambda: grad_check(lambda a, b: _contract(tc.stack([a, b], axis=0)), [_X, _Y]))
register("pad_last")(_unary(lambda a: tc.pad_last(a, 2), _X))
register("matmul_2d")(lambda: grad_check(lambda a, b: _contract(a @ b), [_X, _rng(6).standard_normal((4, 5))]))
register("matmul_batched_weight")(lambda: grad_check(
    lambda a, b: _contract(a @ b), [_rng(7).standard_normal((2, 3, 4)), _rng(8).standard_normal((4, 5))]))
register("matmul_broadcast")(lambda: grad_check(
    lambda a, b: _contract(a @ b), [_rng(9).standard_normal((2, 3, 4)), _rng(10).standard_normal((1, 4, 2))]))
register("softmax")(_unary(lambda a: tc.softmax(a, axis=-1), _X))
register("softmax_temperature")(_unary(lambda a: tc.softmax(a, axis=0, tau=0.3), _X))
register("log_softmax")(_unary(lambda a: tc.log_softmax(a, axis=-1), _X))
register("l2_normalize")(_unary(tc.l2_normalize, _X))
register("layer_norm")(lambda: grad_check(
    lambda a, w, b: _contract(tc.layer_norm(a, w, b)), [_X, _rng(11).standard_normal(4), _rng(12).standard_normal(4)]))


@register("cross_entropy")
def _ce():
    labels = np.array([0, 3, 1])
    return grad_check(lambda a: tc.cross_entropy(a, labels), _X)


@register("identity_cross_entropy")
def _ice():
    x = _rng(13).standard_normal((2, 3, 3))
    return grad_check(lambda a: tc.identity_cross_entropy(tc.softmax(a, axis=-1)), x)


# -- layers ------------------------------------------------------------------------------


def _module_check(module_fn, input_shape, seed: int, max_coords: int = 40) -> float:
    with precision(np.float64):
        mod, call = module_fn()
        mod.astype(np.float64)
        x = _rng(seed).standard_normal(input_shape)
        err_x = grad_check(lambda a: _contract(call(a)), x)
        xt = Tensor(x, dtype=np.float64)
        errs = grad_check_params(lambda: _contract(call(xt)), mod.parameters(), max_coords=max_coords)
    return max([err_x] + list(errs.values()))


@register("linear")
def _linear():
    def make():
        m = tc.Linear(4, 3, _rng(20))
        return m, m
    return _module_check(make, (2, 5, 4), 21)


@register("gru_cell")
def _gru():
    def make():
        m = tc.GRUCell(5, 4, _rng(22))
        h = Tensor(_rng(23).standard_normal((3, 4)), dtype=np.float64)
        return m, lambda x: m(h, x)
    return _module_check(make, (3, 5), 24)


@register("gru_cell_hidden")
def _gru_h():
    def make():
        m = tc.GRUCell(5, 4, _rng(25))
        x = Tensor(_rng(26).standard_normal((3, 5)), dtype=np.float64)
        return m, lambda h: m(h, x)
    return _module_check(make, (3, 4), 27)


@register("attention_block")
def _attn():
    def make():
        m = tc.AttentionBlock(6, _rng(28))
        return m, m
    return _module_check(make, (2, 5, 6), 29)


# -- flow and slot ops ---------------------------------------------------------------------


@register("adjacency")
def _adj():
    from .patchflow import adjacency

    a, b = _rng(30).standard_normal((5, 4)), _rng(31).standard_normal((6, 4))
    return grad_check(lambda x, y: _contract(adjacency(x, y, 0.5)), [a, b])


def _bank(seed: int = 40):
    from .snapshot import SlotBank

    bank = SlotBank(stride=1, T=4, K=3, B=5, iters=3, seed=seed)
    bank.astype(np.float64)
    return bank


@register("slot_attention")
def _slots():
    from .snapshot import slot_attention

    with precision(np.float64):
        bank = _bank()
        O = _rng(41).standard_normal((7, bank.D))
        err_x = grad_check(lambda a: _contract(slot_attention(a, bank)), O)
        Ot = Tensor(O, dtype=np.float64)
        errs = grad_check_params(lambda: _contract(slot_attention(Ot, bank)), bank.parameters(), max_coords=30)
    return max([err_x] + list(errs.values()))


@register("snapshot_activations")
def _snap():
    from .snapshot import snapshot_activations

    O, Z = _rng(42).standard_normal((7, 6)), _rng(43).standard_normal((3, 6))
    return grad_check(lambda a, b: _contract(snapshot_activations(a, b)), [O, Z])


@register("walk_loss")
def _walk():
    from .snapshot import walk_loss

    O, Z = _rng(44).standard_normal((7, 6)), _rng(45).standard_normal((3, 6))
    return grad_check(lambda a, b: walk_loss(a, b, 0.5), [O, Z])


@register("walk_loss_default_temperature")
def _walk_mu():
    from .snapshot import walk_loss

    O = 0.3 * _rng(46).standard_normal((7, 6))
    Z = 0.3 * _rng(47).standard_normal((3, 6))
    return grad_check(lambda a, b: walk_loss(a, b, 0.05), [O, Z], eps=1e-4)


# -- model heads and the end-to-end loss ------------------------------------------------------


def miniature_config(**kw):
    from .fusion import ModelConfig

    base = dict(num_classes=3, K=2, strides=(1,), T=8, grid=(3, 3), B=8, depth=1, seed=5)
    base.update(kw)
    return ModelConfig(**base)


def miniature_batch(cfg, batch: int = 2, seed: int = 50) -> tuple[dict, np.ndarray]:
    rng = _rng(seed)
    flows = {s: rng.standard_normal((batch, cfg.T, cfg.N, 2, cfg.T // s - 1)) for s in cfg.active_strides}
    inv = np.abs(rng.standard_normal((batch, cfg.T, cfg.N, 4)))
    labels = rng.integers(0, cfg.num_classes, size=batch)
    return {"flows": flows, "invariant": inv}, labels


def _model(cfg):
    from .fusion import MotionPerceiver

    return MotionPerceiver(cfg).astype(np.float64)


@register("fsn_head")
def _fsn():
    with precision(np.float64):
        cfg = miniature_config(use_min=False)
        m = _model(cfg)
        act = _rng(51).standard_normal((2, cfg.T, cfg.N, 2 * cfg.K))
        err_x = grad_check(lambda a: _contract(m.flow_head(m.fsn_features(a))), act)
        at = Tensor(act, dtype=np.float64)
        sub = {k: v for k, v in m.parameters().items() if k.startswith(("fsn_", "flow_head"))}
        errs = grad_check_params(lambda: _contract(m.flow_head(m.fsn_features(at))), sub, max_coords=10)
    return max([err_x] + list(errs.values()))


@register("min_head")
def _min():
    with precision(np.float64):
        cfg = miniature_config(use_fsn=False)
        m = _model(cfg)
        inv = np.abs(_rng(52).standard_normal((2, cfg.T, cfg.N, 4)))
        err_x = grad_check(lambda a: _contract(m.invar_head(m.min_features(a))), inv)
        it = Tensor(inv, dtype=np.float64)
        sub = {k: v for k, v in m.parameters().items() if k.startswith(("min_", "invar_head"))}
        errs = grad_check_params(lambda: _contract(m.invar_head(m.min_features(it))), sub, max_coords=10)
    return max([err_x] + list(errs.values()))


@register("fuse_head")
def _fuse():
    with precision(np.float64):
        cfg = miniature_config()
        m = _model(cfg)
        a = _rng(53).standard_normal((2, m.n_fsn))
        b = _rng(54).standard_normal((2, cfg.N))
        return grad_check(lambda x, y: _contract(m.fuse_head(tc.concat([x, y], axis=-1))), [a, b])


@register("end_to_end_loss", tol=E2E_TOL)
def _e2e():
    from .fusion import total_loss

    with precision(np.float64):
        cfg = miniature_config()
        m = _model(cfg)
        batch, labels = miniature_batch(cfg)
        thr = {s: np.where(np.abs(f) < 0.05, 0.05, f) for s, f in batch["flows"].items()}
        batch = {"flows": thr, "invariant": batch["invariant"]}
        errs = grad_check_params(lambda: total_loss(m(batch, train=True), labels, cfg)[0], m.parameters(),
                                 max_coords=6)
    return max(errs.values())


def run_suite(names=None) -> list[CheckResult]:
    out = []
    for name, fn, tol in _REGISTRY:
        if names is not None and name not in names:
            continue
        t0 = time.time()
        err = float(fn())
        out.append(CheckResult(name, err, tol, time.time() - t0))
    return out
