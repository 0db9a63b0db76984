"""Numpy tensor engine: autodiff, neural blocks, AdamW, gradient checking."""
from .gradcheck import grad_check, grad_check_params
from .nn import (
    AttentionBlock,
    GRUCell,
    LayerNorm,
    Linear,
    Module,
    attention_block,
    cross_entropy,
    gru_cell,
    identity_cross_entropy,
    parameter,
    time_embedding,
    xavier_uniform,
)
from .optim import AdamW, OptimizerState, adamw_step, cosine_lr
from .tensor import (
    NonFiniteError,
    Tensor,
    as_tensor,
    concat,
    exp,
    gelu,
    get_default_dtype,
    l2_normalize,
    l2_normalize_np,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    no_grad,
    pad_last,
    precision,
    relu,
    sigmoid,
    softmax,
    softmax_np,
    stack,
    tanh,
)


def softmax_rows(x, tau: float = 1.0):
    """Row softmax of ``x / tau``; accepts tensors or arrays."""
    if isinstance(x, Tensor):
        return softmax(x, axis=-1, tau=tau)
    return softmax_np(x, axis=-1, tau=tau)
