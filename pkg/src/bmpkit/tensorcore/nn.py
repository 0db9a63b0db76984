"""Neural building blocks on top of :mod:`bmpkit.tensorcore.tensor`."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as tc
from .tensor import Tensor


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def xavier_uniform(rng: np.random.Generator, fan_out: int, fan_in: int, shape=None) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_out, fan_in))


class Module:
    """Minimal parameter container.

    Parameters are any ``Tensor`` attributes with ``requires_grad`` set;
    submodules and lists of submodules are traversed in attribute order, so
    names are stable across runs.
    """

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def astype(self, dtype) -> "Module":
        """Recast every parameter in place (e.g. to float64 for gradient checks)."""
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype).copy()

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = parameter(xavier_uniform(rng, d_out, d_in, (d_in, d_out)))
        self.bias = parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x) -> Tensor:
        y = tc.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.weight = parameter(np.ones(d))
        self.bias = parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return tc.layer_norm(x, self.weight, self.bias, self.eps)


class GRUCell(Module):
    """Fully gated GRU cell.

    r = sigmoid(x W_xr + h W_hr + b_r)
    z = sigmoid(x W_xz + h W_hz + b_z)
    n = tanh(x W_xn + b_xn + r * (h W_hn + b_hn))
    h' = (1 - z) * n + z * h
    """

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        self.d_in = d_in
        self.d_hidden = d_hidden
        self.w_x = parameter(xavier_uniform(rng, 3 * d_hidden, d_in, (d_in, 3 * d_hidden)))
        self.w_h = parameter(xavier_uniform(rng, 3 * d_hidden, d_hidden, (d_hidden, 3 * d_hidden)))
        self.b_x = parameter(np.zeros(3 * d_hidden))
        self.b_h = parameter(np.zeros(3 * d_hidden))

    def __call__(self, h, x) -> Tensor:
        h = tc.as_tensor(h)
        x = tc.as_tensor(x)
        if h.shape[-1] != self.d_hidden or x.shape[-1] != self.d_in:
            raise ValueError(
                f"GRU shape mismatch: h[..., {h.shape[-1]}] vs {self.d_hidden}, x[..., {x.shape[-1]}] vs {self.d_in}"
            )
        if h.shape[:-1] != x.shape[:-1]:
            raise ValueError(f"GRU leading dims differ: {h.shape[:-1]} vs {x.shape[:-1]}")
        d = self.d_hidden
        gx = x @ self.w_x + self.b_x
        gh = h @ self.w_h + self.b_h
        r = tc.sigmoid(gx[..., :d] + gh[..., :d])
        z = tc.sigmoid(gx[..., d : 2 * d] + gh[..., d : 2 * d])
        n = tc.tanh(gx[..., 2 * d :] + r * gh[..., 2 * d :])
        return (1.0 - z) * n + z * h


def gru_cell(h, x, cell: GRUCell) -> Tensor:
    return cell(h, x)


class AttentionBlock(Module):
    """Single-head pre-norm self-attention block with a GELU MLP (hidden 2d)."""

    def __init__(self, d: int, rng: np.random.Generator, mlp_ratio: int = 2):
        self.d = d
        self.norm1 = LayerNorm(d)
        self.qkv = Linear(d, 3 * d, rng)
        self.proj = Linear(d, d, rng)
        self.norm2 = LayerNorm(d)
        self.fc1 = Linear(d, mlp_ratio * d, rng)
        self.fc2 = Linear(mlp_ratio * d, d, rng)

    def attention_weights(self, x) -> Tensor:
        h = self.norm1(x)
        qkv = self.qkv(h)
        d = self.d
        q, k = qkv[..., :d], qkv[..., d : 2 * d]
        return tc.softmax(q @ k.T * (1.0 / math.sqrt(d)), axis=-1)

    def __call__(self, x) -> Tensor:
        x = tc.as_tensor(x)
        if x.shape[-1] != self.d:
            raise ValueError(f"attention block expects width {self.d}, got {x.shape[-1]}")
        d = self.d
        h = self.norm1(x)
        qkv = self.qkv(h)
        q, k, v = qkv[..., :d], qkv[..., d : 2 * d], qkv[..., 2 * d :]
        attn = tc.softmax(q @ k.T * (1.0 / math.sqrt(d)), axis=-1)
        x = x + self.proj(attn @ v)
        return x + self.fc2(tc.gelu(self.fc1(self.norm2(x))))


def attention_block(tokens, block: AttentionBlock) -> Tensor:
    return block(tokens)


def time_embedding(T: int, d: int) -> np.ndarray:
    """Sinusoidal embedding: (t, 2i) -> sin(t / 10000^(2i/d)), (t, 2i+1) -> cos(...)."""
    if d % 2:
        raise ValueError(f"time embedding needs an even width, got {d}")
    t = np.arange(T, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    out = np.empty((T, d))
    out[:, 0::2] = np.sin(t / freq)
    out[:, 1::2] = np.cos(t / freq)
    return out


def cross_entropy(logits, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    logits = tc.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n_cls = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        raise ValueError(f"labels must lie in [0, {n_cls})")
    logp = tc.log_softmax(logits, axis=-1)
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
    return -(logp * onehot).sum() * (1.0 / max(labels.size, 1))


def identity_cross_entropy(probs, eps: float = 1e-12) -> Tensor:
    """Cross entropy of a row-stochastic square matrix against the identity.

    Returns the mean over rows (and leading batch dims) of ``-log P_ii``.
    """
    probs = tc.as_tensor(probs)
    k = probs.shape[-1]
    if probs.shape[-2] != k:
        raise ValueError(f"expected square matrices, got {probs.shape}")
    diag = (probs * np.eye(k, dtype=probs.dtype)).sum(axis=-1)
    return -tc.log(diag + eps).mean()
