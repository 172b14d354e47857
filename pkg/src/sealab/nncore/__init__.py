from .functional import (
    bce,
    bce_with_logits_loss,
    cross_entropy,
    cross_entropy_loss,
    l2_normalize,
    log_softmax,
    mse_loss,
    normalize_rows,
    sigmoid,
    softmax,
)
from .layers import Dense, L2Normalize, ReLU, Sequential, forward, mlp
from .model import ArchConfig, EncoderState, Model, preprocess
from .optim import cosine_lr, ema_update, sgd_step
from .tensor import (
    NoTapeError,
    Tensor,
    backward,
    concat,
    matmul,
    no_grad,
    relu,
    reset_tape_node_count,
    rowdot,
    tape_node_count,
    weighted_sum,
)
