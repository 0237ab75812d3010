"""Reverse-mode autodiff tape and the neural building blocks of the models."""

from .engine import Parameter, Tape, Tensor, backward, glorot_uniform
from .ops import (
    add,
    add_bias,
    add_const,
    affine_const,
    concat,
    concat_rows,
    cos,
    dense,
    dot_similarity,
    embedding_lookup,
    lstm_cell,
    matmul,
    mean_all,
    mul,
    relu,
    scale,
    sigmoid,
    slice_cols,
    softmax,
    sqrt,
    sub,
    tanh,
    weighted_centroid,
)
from .optim import clip_gradients, sgd_momentum_step

__all__ = [
    "Parameter",
    "Tape",
    "Tensor",
    "add",
    "add_bias",
    "add_const",
    "affine_const",
    "backward",
    "clip_gradients",
    "concat",
    "concat_rows",
    "cos",
    "dense",
    "dot_similarity",
    "embedding_lookup",
    "glorot_uniform",
    "lstm_cell",
    "matmul",
    "mean_all",
    "mul",
    "relu",
    "scale",
    "sgd_momentum_step",
    "sigmoid",
    "slice_cols",
    "softmax",
    "sqrt",
    "sub",
    "tanh",
    "weighted_centroid",
]
