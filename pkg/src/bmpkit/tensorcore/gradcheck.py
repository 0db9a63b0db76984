"""Compare reverse-mode gradients with central finite differences."""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor, no_grad, precision


# offsets (in units of eps) and weights of central difference stencils
_STENCILS = {
    2: ((1, -1), (0.5, -0.5)),
    5: ((2, 1, -1, -2), (-1 / 12, 8 / 12, -8 / 12, 1 / 12)),
}
_DEFAULT_EPS = {2: 1e-4, 5: 1e-3}


def _relative_errors(analytic: np.ndarray, numeric: np.ndarray, atol: float) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol)
    return np.abs(analytic - numeric) / scale


def _check(f: Callable[[], Tensor], wrt: Sequence[Tensor], eps: float, atol: float,
           max_coords: int | None, rng: np.random.Generator | None, stencil: int = 2) -> float:
    if stencil not in _STENCILS:
        raise ValueError(f"stencil must be one of {sorted(_STENCILS)}")
    offsets, weights = _STENCILS[stencil]
    for t in wrt:
        t.grad = None
    try:
        out = f()
    except NonFiniteError:
        return math.inf
    if out.size != 1 or not np.isfinite(out.data).all():
        return math.inf
    out.backward()
    worst = 0.0
    for t in wrt:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        numeric = np.empty(len(coords))
        with no_grad():
            for j, i in enumerate(coords):
                orig = flat[i]
                vals = []
                try:
                    for k in offsets:
                        flat[i] = orig + k * eps
                        vals.append(f().item())
                except NonFiniteError:
                    return math.inf
                finally:
                    flat[i] = orig
                if not all(math.isfinite(v) for v in vals):
                    return math.inf
                numeric[j] = sum(w * v for w, v in zip(weights, vals)) / eps
        err = _relative_errors(analytic.reshape(-1)[coords], numeric, atol)
        if err.size:
            worst = max(worst, float(err.max()))
    return worst


def grad_check(f: Callable[..., Tensor], x, eps: float | None = None, atol: float = 1e-6,
               max_coords: int | None = None, seed: int = 0, stencil: int = 2) -> float:
    """Max per-coordinate relative error between autodiff and central differences.

    ``f`` receives one float64 tensor per entry of ``x`` (a single array is
    treated as one input) and must return a scalar tensor. Non-finite output
    counts as failure and yields ``inf``. ``stencil=2`` is the plain
    (f(x+e) - f(x-e)) / 2e difference with eps 1e-4; ``stencil=5`` is the
    fourth-order five-point difference with eps 1e-3, whose reference error is
    small enough to resolve relative errors below 1e-5 on O(10) outputs.
    """
    eps = _DEFAULT_EPS[stencil] if eps is None else eps
    arrays = x if isinstance(x, (list, tuple)) else [x]
    with precision(np.float64):
        wrt = [Tensor(np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64),
                      requires_grad=True, dtype=np.float64) for a in arrays]
        return _check(lambda: f(*wrt), wrt, eps, atol, max_coords, np.random.default_rng(seed), stencil)


def grad_check_params(f: Callable[[], Tensor], params: dict[str, Tensor], eps: float | None = None,
                      atol: float = 1e-6, max_coords: int | None = None, seed: int = 0,
                      stencil: int = 2) -> dict[str, float]:
    """Per-parameter errors for a closure over already-float64 parameters."""
    rng = np.random.default_rng(seed)
    eps = _DEFAULT_EPS[stencil] if eps is None else eps
    with precision(np.float64):
        return {name: _check(f, [p], eps, atol, max_coords, rng, stencil) for name, p in params.items()}
