"""Differentiable operations recorded on a :class:`~taxidest.nncore.engine.Tape`.

Every op takes the tape first (``None`` skips recording, for inference),
then Tensors for differentiable arguments and plain arrays or scalars for
constants.  Backward rules accumulate into input tensors via
``Tensor.accumulate``; constants never receive gradients.
"""

from __future__ import annotations

import numpy as np

from .. import _kernels
from .engine import Tape, Tensor

__all__ = [
    "add",
    "add_bias",
    "add_const",
    "affine_const",
    "concat",
    "concat_rows",
    "cos",
    "dense",
    "dot_similarity",
    "embedding_lookup",
    "lstm_cell",
    "matmul",
    "mean_all",
    "mul",
    "relu",
    "scale",
    "sigmoid",
    "slice_cols",
    "softmax",
    "sqrt",
    "sub",
    "tanh",
    "weighted_centroid",
]


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def matmul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data @ b.data)
    if tape is not None:
        def bwd(g):
            a.accumulate(g @ b.data.T)
            b.accumulate(a.data.T @ g)
        tape.record(out, bwd)
    return out


def add_bias(tape: Tape, x: Tensor, b: Tensor) -> Tensor:
    if b.data.shape != (x.data.shape[-1],):
        raise ValueError(f"add_bias: bias shape {b.data.shape} vs input {x.data.shape}")
    out = Tensor(x.data + b.data)
    if tape is not None:
        def bwd(g):
            x.accumulate(g)
            b.accumulate(g.sum(axis=0))
        tape.record(out, bwd)
    return out


def dense(tape: Tape, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b, broadcast over the batch."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise ValueError(f"dense: input shape {x.data.shape} vs weights {w.data.shape}")
    return add_bias(tape, matmul(tape, x, w), b)


def relu(tape: Tape, x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))
    if tape is not None:
        mask = x.data > 0  # subgradient at exactly 0 is 0
        def bwd(g):
            x.accumulate(g * mask)
        tape.record(out, bwd)
    return out


def softmax(tape: Tape, x: Tensor) -> Tensor:
    """Row-wise softmax, stabilized by max subtraction."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)
    if tape is not None:
        def bwd(g):
            x.accumulate(y * (g - (g * y).sum(axis=-1, keepdims=True)))
        tape.record(out, bwd)
    return out


def embedding_lookup(tape: Tape, table: Tensor, indices) -> Tensor:
    """Gather rows of ``table``; backward scatter-adds into touched rows only."""
    idx = np.asarray(indices, dtype=np.int64)
    rows = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        bad = idx[(idx < 0) | (idx >= rows)][0]
        raise IndexError(f"embedding index {bad} out of range [0, {rows})")
    out = Tensor(table.data[idx])
    if tape is not None:
        def bwd(g):
            _kernels.scatter_add_rows(table.ensure_grad(), idx, np.ascontiguousarray(g))
        tape.record(out, bwd)
    return out


def concat(tape: Tape, tensors: list[Tensor], axis: int = 1) -> Tensor:
    if axis != 1:
        raise ValueError("concat supports the feature axis (1) only")
    if len(tensors) == 1:
        t = tensors[0]
        out = Tensor(t.data.copy())
        if tape is not None:
            def bwd_one(g):
                t.accumulate(g)
            tape.record(out, bwd_one)
        return out
    n_rows = tensors[0].data.shape[0]
    for t in tensors[1:]:
        if t.data.shape[0] != n_rows:
            raise ValueError(
                f"concat: row mismatch {tensors[0].data.shape} vs {t.data.shape}"
            )
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1))
    if tape is not None:
        widths = [t.data.shape[1] for t in tensors]
        def bwd(g):
            offset = 0
            for t, w in zip(tensors, widths):
                t.accumulate(g[:, offset : offset + w])
                offset += w
        tape.record(out, bwd)
    return out


def slice_cols(tape: Tape, x: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(x.data[:, start:stop].copy())
    if tape is not None:
        def bwd(g):
            buf = x.ensure_grad()
            buf[:, start:stop] += g
        tape.record(out, bwd)
    return out


def concat_rows(tape: Tape, parts: list[Tensor], row_indices: list[np.ndarray]) -> Tensor:
    """Scatter row blocks back into one batch-ordered tensor.

    ``parts[i]`` supplies the rows listed in ``row_indices[i]``; the index
    lists must partition the output rows.  Used to reassemble per-length
    buckets of recurrent batches.
    """
    total = sum(len(ix) for ix in row_indices)
    width = parts[0].data.shape[1]
    out_data = np.empty((total, width), dtype=parts[0].data.dtype)
    for part, ix in zip(parts, row_indices):
        out_data[ix] = part.data
    out = Tensor(out_data)
    if tape is not None:
        def bwd(g):
            for part, ix in zip(parts, row_indices):
                part.accumulate(g[ix])
        tape.record(out, bwd)
    return out


def weighted_centroid(tape: Tape, p: Tensor, centers: np.ndarray) -> Tensor:
    """Probability-weighted average of fixed centers: p @ centers.

    ``centers`` is a constant (C, 2) array and receives no gradient, so the
    output always lies in the convex hull of the centers.
    """
    centers = np.asarray(centers)
    if p.data.shape[-1] != centers.shape[0]:
        raise ValueError(
            f"weighted_centroid: {p.data.shape[-1]} probabilities vs {centers.shape[0]} centers"
        )
    c = centers.astype(p.data.dtype, copy=False)
    out = Tensor(p.data @ c)
    if tape is not None:
        def bwd(g):
            p.accumulate(g @ c.T)
        tape.record(out, bwd)
    return out


def dot_similarity(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    """Pairwise dot products a @ b.T; both sides receive gradients."""
    if a.data.shape[-1] != b.data.shape[-1]:
        raise ValueError(f"dot_similarity: width mismatch {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data @ b.data.T)
    if tape is not None:
        def bwd(g):
            a.accumulate(g @ b.data)
            b.accumulate(g.T @ a.data)
        tape.record(out, bwd)
    return out


def add(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    if tape is not None:
        def bwd(g):
            a.accumulate(g)
            b.accumulate(g)
        tape.record(out, bwd)
    return out


def sub(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)
    if tape is not None:
        def bwd(g):
            a.accumulate(g)
            b.accumulate(-g)
        tape.record(out, bwd)
    return out


def mul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)
    if tape is not None:
        def bwd(g):
            a.accumulate(g * b.data)
            b.accumulate(g * a.data)
        tape.record(out, bwd)
    return out


def scale(tape: Tape, x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data * float(c))
    if tape is not None:
        def bwd(g):
            x.accumulate(g * float(c))
        tape.record(out, bwd)
    return out


def add_const(tape: Tape, x: Tensor, c) -> Tensor:
    c = np.asarray(c).astype(x.data.dtype, copy=False)
    out = Tensor(x.data + c)
    if tape is not None:
        def bwd(g):
            x.accumulate(g)
        tape.record(out, bwd)
    return out


def affine_const(tape: Tape, x: Tensor, mul_c, add_c) -> Tensor:
    """x * mul_c + add_c with constant (broadcastable) coefficients."""
    mul_c = np.asarray(mul_c).astype(x.data.dtype, copy=False)
    add_c = np.asarray(add_c).astype(x.data.dtype, copy=False)
    out = Tensor(x.data * mul_c + add_c)
    if tape is not None:
        def bwd(g):
            x.accumulate(g * mul_c)
        tape.record(out, bwd)
    return out


def cos(tape: Tape, x: Tensor) -> Tensor:
    out = Tensor(np.cos(x.data))
    if tape is not None:
        def bwd(g):
            x.accumulate(-np.sin(x.data) * g)
        tape.record(out, bwd)
    return out


def sqrt(tape: Tape, x: Tensor) -> Tensor:
    out = Tensor(np.sqrt(x.data))
    if tape is not None:
        def bwd(g):
            x.accumulate(g * 0.5 / out.data)
        tape.record(out, bwd)
    return out


def tanh(tape: Tape, x: Tensor) -> Tensor:
    out = Tensor(np.tanh(x.data))
    if tape is not None:
        def bwd(g):
            x.accumulate(g * (1.0 - out.data * out.data))
        tape.record(out, bwd)
    return out


def sigmoid(tape: Tape, x: Tensor) -> Tensor:
    d = x.data
    out_data = np.empty_like(d)
    pos = d >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out_data[~pos] = ex / (1.0 + ex)
    out = Tensor(out_data)
    if tape is not None:
        def bwd(g):
            x.accumulate(g * out.data * (1.0 - out.data))
        tape.record(out, bwd)
    return out


def mean_all(tape: Tape, x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.mean(), dtype=x.data.dtype))
    if tape is not None:
        n = x.data.size
        def bwd(g):
            x.accumulate(np.full_like(x.data, g / n))
        tape.record(out, bwd)
    return out


def lstm_cell(
    tape: Tape,
    x: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    wx: Tensor,
    wh: Tensor,
    b: Tensor,
) -> tuple[Tensor, Tensor]:
    """One LSTM step with input/forget/output gates and tanh candidate.

    Gate preactivations are packed (i, f, g, o) along the last axis of
    ``wx`` (in, 4H), ``wh`` (H, 4H) and ``b`` (4H,).  Composed from
    primitive ops, so it is differentiable through the tape like any
    other graph.
    """
    hidden = h_prev.data.shape[-1]
    if wx.data.shape != (x.data.shape[-1], 4 * hidden) or wh.data.shape != (hidden, 4 * hidden):
        raise ValueError(
            f"lstm_cell: weight shapes {wx.data.shape}/{wh.data.shape} do not match "
            f"input {x.data.shape} and hidden {h_prev.data.shape}"
        )
    pre = add_bias(tape, add(tape, matmul(tape, x, wx), matmul(tape, h_prev, wh)), b)
    i_gate = sigmoid(tape, slice_cols(tape, pre, 0, hidden))
    f_gate = sigmoid(tape, slice_cols(tape, pre, hidden, 2 * hidden))
    g_cand = tanh(tape, slice_cols(tape, pre, 2 * hidden, 3 * hidden))
    o_gate = sigmoid(tape, slice_cols(tape, pre, 3 * hidden, 4 * hidden))
    c = add(tape, mul(tape, f_gate, c_prev), mul(tape, i_gate, g_cand))
    h = mul(tape, o_gate, tanh(tape, c))
    return h, c
