from .tensor import (
    Tensor,
    add,
    conv1d,
    cross_entropy,
    div,
    exp,
    flatten,
    global_avg_pool,
    grad_reverse,
    l2_normalize,
    linear,
    log,
    matmul,
    mul,
    power,
    relu,
    reshape,
    softmax,
    tmean,
    transpose,
    tsum,
)
from .network import LayerSpec, Network, build_network, conv_output_length, feature_length
from .optim import Adam, OptimizerState, adam_step, make_adamw
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "add", "conv1d", "cross_entropy", "div", "exp", "flatten",
    "global_avg_pool", "grad_reverse", "l2_normalize", "linear", "log",
    "matmul", "mul", "power", "relu", "reshape", "softmax", "tmean",
    "transpose", "tsum",
    "LayerSpec", "Network", "build_network", "conv_output_length", "feature_length",
    "Adam", "OptimizerState", "adam_step", "make_adamw",
    "load_checkpoint", "save_checkpoint",
]
