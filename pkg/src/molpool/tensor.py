"""Dense float64 tensors with reverse-mode autodiff on a recorded tape.

Every differentiable operation appends one node to a Tape (a Wengert list);
node ids are topologically ordered by construction, so the backward pass is a
single reverse sweep that visits each node exactly once.  Segment reductions
(the workhorses of graph batching and pooling) and a fused neighbor-message
operation built on sparse adjacency matrices live here too.
"""

from __future__ import annotations

import json
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class IdOutOfRangeError(IndexError):
    """A segment id falls outside 0..num_segments-1."""


class NotScalarError(ValueError):
    """backward() was asked to differentiate a non-scalar."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""


def _f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _idx(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.int64)
    if a.ndim != 1:
        raise ShapeMismatchError(f"index vector must be 1-D, got shape {a.shape}")
    return a


def _check_segments(segments: np.ndarray, num_segments: int) -> None:
    if segments.size and (segments.min() < 0 or segments.max() >= num_segments):
        raise IdOutOfRangeError(
            f"segment ids must lie in 0..{num_segments - 1}, "
            f"got range [{segments.min()}, {segments.max()}]"
        )


class Tensor:
    """A float64 array recorded on a tape.  Data is treated as immutable."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data: np.ndarray, tape: "Tape", node_id: int):
        self.data = data
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, node_id={self.node_id})"


class _Node:
    """One tape entry: op kind, input node ids, and the grad propagator."""

    __slots__ = ("op", "input_ids", "backward_fn")

    def __init__(self, op: str, input_ids: tuple[int, ...],
                 backward_fn: Callable[[np.ndarray, list], None] | None):
        self.op = op
        self.input_ids = input_ids
        self.backward_fn = backward_fn


class Tape:
    """Append-only record of differentiable ops for one forward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.backward_visits = 0

    def leaf(self, data) -> Tensor:
        """Register an input (parameter or constant) on the tape."""
        return self._push("leaf", (), _f64(data), None)

    def _push(self, op: str, input_ids: tuple[int, ...], data: np.ndarray,
              backward_fn) -> Tensor:
        self.nodes.append(_Node(op, input_ids, backward_fn))
        return Tensor(data, self, len(self.nodes) - 1)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Reverse sweep from a scalar loss; returns node id -> gradient."""
        if loss.tape is not self:
            raise ValueError("loss tensor belongs to a different tape")
        if loss.data.size != 1:
            raise NotScalarError(f"loss must be scalar, got shape {loss.data.shape}")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.node_id] = np.ones_like(loss.data)
        for nid in range(len(self.nodes) - 1, -1, -1):
            self.backward_visits += 1
            g = grads[nid]
            node = self.nodes[nid]
            if g is None or node.backward_fn is None:
                continue
            node.backward_fn(g, grads)
        return {i: g for i, g in enumerate(grads) if g is not None}


def _acc(grads: list, nid: int, value: np.ndarray, fresh: bool = True) -> None:
    # fresh=False marks values that alias other arrays (views / passthrough
    # grads); those must be copied before they can be accumulated into.
    if grads[nid] is None:
        grads[nid] = value if fresh else value.copy()
    else:
        grads[nid] += value


def _same_tape(*tensors: Tensor) -> Tape:
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise ValueError("operands live on different tapes")
    return tape


# ---------------------------------------------------------------------------
# core ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatchError(f"matmul: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def bwd(g, grads):
        _acc(grads, a.node_id, g @ bd.T)
        _acc(grads, b.node_id, ad.T @ g)

    return tape._push("matmul", (a.node_id, b.node_id), out, bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; b may also be a bias row broadcast over a's rows."""
    tape = _same_tape(a, b)
    row_broadcast = (
        a.data.ndim == 2
        and b.data.ndim in (1, 2)
        and b.data.shape[-1] == a.data.shape[1]
        and (b.data.ndim == 1 or b.data.shape[0] == 1)
        and b.data.shape != a.data.shape
    )
    if a.data.shape != b.data.shape and not row_broadcast:
        raise ShapeMismatchError(f"add: {a.data.shape} + {b.data.shape}")
    out = a.data + b.data
    b_shape = b.data.shape

    def bwd(g, grads):
        _acc(grads, a.node_id, g, fresh=False)
        if row_broadcast:
            _acc(grads, b.node_id, g.sum(axis=0).reshape(b_shape))
        else:
            _acc(grads, b.node_id, g, fresh=False)

    return tape._push("add", (a.node_id, b.node_id), out, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"sub: {a.data.shape} - {b.data.shape}")
    out = a.data - b.data

    def bwd(g, grads):
        _acc(grads, a.node_id, g, fresh=False)
        _acc(grads, b.node_id, -g)

    return tape._push("sub", (a.node_id, b.node_id), out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"mul: {a.data.shape} * {b.data.shape}")
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bwd(g, grads):
        _acc(grads, a.node_id, g * bd)
        _acc(grads, b.node_id, g * ad)

    return tape._push("mul", (a.node_id, b.node_id), out, bwd)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (no gradient for c)."""
    c = float(c)
    out = a.data * c

    def bwd(g, grads):
        _acc(grads, a.node_id, g * c)

    return a.tape._push("scale", (a.node_id,), out, bwd)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    mask = a.data > 0.0

    def bwd(g, grads):
        _acc(grads, a.node_id, g * mask)

    return a.tape._push("relu", (a.node_id,), out, bwd)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g, grads):
        _acc(grads, a.node_id, g * out * (1.0 - out))

    return a.tape._push("sigmoid", (a.node_id,), out, bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bwd(g, grads):
        _acc(grads, a.node_id, g * (1.0 - out * out))

    return a.tape._push("tanh", (a.node_id,), out, bwd)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last dimension."""
    tape = _same_tape(a, b)
    if a.data.ndim != b.data.ndim or a.data.shape[:-1] != b.data.shape[:-1]:
        raise ShapeMismatchError(f"concat: {a.data.shape} || {b.data.shape}")
    out = np.concatenate([a.data, b.data], axis=-1)
    na = a.data.shape[-1]

    def bwd(g, grads):
        _acc(grads, a.node_id, g[..., :na], fresh=False)
        _acc(grads, b.node_id, g[..., na:], fresh=False)

    return tape._push("concat", (a.node_id, b.node_id), out, bwd)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim < 1 or not (0 <= start <= stop <= a.data.shape[-1]):
        raise ShapeMismatchError(
            f"slice_cols: [{start}:{stop}] invalid for shape {a.data.shape}"
        )
    out = a.data[..., start:stop].copy()
    full = a.data.shape

    def bwd(g, grads):
        wide = np.zeros(full)
        wide[..., start:stop] = g
        _acc(grads, a.node_id, wide)

    return a.tape._push("slice_cols", (a.node_id,), out, bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.data.size:
        raise ShapeMismatchError(f"reshape: {a.data.shape} -> {shape}")
    out = a.data.reshape(shape)
    orig = a.data.shape

    def bwd(g, grads):
        _acc(grads, a.node_id, g.reshape(orig), fresh=False)

    return a.tape._push("reshape", (a.node_id,), out, bwd)


def gather_rows(a: Tensor, index) -> Tensor:
    """Rows of a selected by an integer vector (duplicates allowed)."""
    index = _idx(index)
    n = a.data.shape[0]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IdOutOfRangeError(f"gather index out of range for {n} rows")
    out = a.data[index]
    in_shape = a.data.shape

    def bwd(g, grads):
        acc = np.zeros(in_shape)
        np.add.at(acc, index, g)
        _acc(grads, a.node_id, acc)

    return a.tape._push("gather_rows", (a.node_id,), out, bwd)


def row_sum(a: Tensor) -> Tensor:
    """[N x d] -> [N]: sum over the last axis."""
    if a.data.ndim != 2:
        raise ShapeMismatchError(f"row_sum expects 2-D, got {a.data.shape}")
    out = a.data.sum(axis=1)
    d = a.data.shape[1]

    def bwd(g, grads):
        _acc(grads, a.node_id, np.repeat(g[:, None], d, axis=1))

    return a.tape._push("row_sum", (a.node_id,), out, bwd)


def scale_rows(a: Tensor, s: Tensor) -> Tensor:
    """Row i of a multiplied by scalar s[i]."""
    tape = _same_tape(a, s)
    if a.data.ndim != 2 or s.data.shape != (a.data.shape[0],):
        raise ShapeMismatchError(f"scale_rows: {a.data.shape} by {s.data.shape}")
    out = a.data * s.data[:, None]
    ad, sd = a.data, s.data

    def bwd(g, grads):
        _acc(grads, a.node_id, g * sd[:, None])
        _acc(grads, s.node_id, (g * ad).sum(axis=1))

    return tape._push("scale_rows", (a.node_id, s.node_id), out, bwd)


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())
    shape = a.data.shape

    def bwd(g, grads):
        _acc(grads, a.node_id, np.full(shape, float(g)))

    return a.tape._push("sum_all", (a.node_id,), out, bwd)


def mean_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.mean())
    shape = a.data.shape
    n = a.data.size

    def bwd(g, grads):
        _acc(grads, a.node_id, np.full(shape, float(g) / n))

    return a.tape._push("mean_all", (a.node_id,), out, bwd)


# ---------------------------------------------------------------------------
# segment reductions
# ---------------------------------------------------------------------------

def _runs(sorted_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # start offsets of equal-id runs and the id of each run
    starts = np.flatnonzero(np.r_[True, sorted_ids[1:] != sorted_ids[:-1]])
    return starts, sorted_ids[starts]


def _segment_sum_data(values: np.ndarray, segments: np.ndarray,
                      num_segments: int) -> np.ndarray:
    out = np.zeros((num_segments,) + values.shape[1:])
    if values.shape[0] == 0:
        return out
    if np.all(segments[1:] >= segments[:-1]):  # sorted: one reduceat call
        starts, ids = _runs(segments)
        out[ids] = np.add.reduceat(values, starts, axis=0)
    else:
        np.add.at(out, segments, values)
    return out


def segment_sum(values: Tensor, segments, num_segments: int) -> Tensor:
    """Per-segment row sums; empty segments yield zero rows."""
    segments = _idx(segments)
    if values.data.shape[0] != segments.shape[0]:
        raise ShapeMismatchError(
            f"segment_sum: {values.data.shape} vs {segments.shape} ids"
        )
    _check_segments(segments, num_segments)
    out = _segment_sum_data(values.data, segments, num_segments)

    def bwd(g, grads):
        _acc(grads, values.node_id, g[segments])

    return values.tape._push("segment_sum", (values.node_id,), out, bwd)


def segment_mean(values: Tensor, segments, num_segments: int) -> Tensor:
    """Per-segment row means; empty segments yield zero rows."""
    segments = _idx(segments)
    if values.data.shape[0] != segments.shape[0]:
        raise ShapeMismatchError(
            f"segment_mean: {values.data.shape} vs {segments.shape} ids"
        )
    _check_segments(segments, num_segments)
    counts = np.bincount(segments, minlength=num_segments).astype(np.float64)
    safe = np.maximum(counts, 1.0)
    out = _segment_sum_data(values.data, segments, num_segments)
    out /= safe[:, None] if out.ndim == 2 else safe

    def bwd(g, grads):
        gg = g / (safe[:, None] if g.ndim == 2 else safe)
        _acc(grads, values.node_id, gg[segments])

    return values.tape._push("segment_mean", (values.node_id,), out, bwd)


def segment_max(values: Tensor, segments, num_segments: int) -> Tensor:
    """Coordinatewise per-segment max; empty segments yield zero rows.

    The gradient routes to a single argmax row per coordinate, ties broken
    toward the lowest row index.
    """
    segments = _idx(segments)
    if values.data.ndim != 2 or values.data.shape[0] != segments.shape[0]:
        raise ShapeMismatchError(
            f"segment_max: {values.data.shape} vs {segments.shape} ids"
        )
    _check_segments(segments, num_segments)
    n, d = values.data.shape
    out = np.zeros((num_segments, d))
    if n:
        present = np.zeros(num_segments, dtype=bool)
        present[segments] = True
        filled = np.full((num_segments, d), -np.inf)
        np.maximum.at(filled, segments, values.data)
        out[present] = filled[present]
        # lowest row index attaining the max, per (segment, coordinate)
        arg = np.full((num_segments, d), n, dtype=np.int64)
        hit = values.data == filled[segments]
        rows = np.broadcast_to(np.arange(n, dtype=np.int64)[:, None], (n, d))
        segcols = np.broadcast_to(segments[:, None], (n, d))
        cols = np.broadcast_to(np.arange(d, dtype=np.int64)[None, :], (n, d))
        np.minimum.at(arg, (segcols[hit], cols[hit]), rows[hit])
    else:
        arg = np.full((num_segments, d), 0, dtype=np.int64)
        present = np.zeros(num_segments, dtype=bool)

    def bwd(g, grads):
        acc = np.zeros((n, d))
        if n:
            seg_ids, col_ids = np.nonzero(present[:, None] & (arg < n))
            acc[arg[seg_ids, col_ids], col_ids] += g[seg_ids, col_ids]
        _acc(grads, values.node_id, acc)

    return values.tape._push("segment_max", (values.node_id,), out, bwd)


def segment_softmax(logits: Tensor, segments, num_segments: int) -> Tensor:
    """Softmax within each segment (max-subtracted for stability)."""
    segments = _idx(segments)
    if logits.data.ndim != 1 or logits.data.shape[0] != segments.shape[0]:
        raise ShapeMismatchError(
            f"segment_softmax: {logits.data.shape} vs {segments.shape} ids"
        )
    _check_segments(segments, num_segments)
    x = logits.data
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, segments, x)
    e = np.exp(x - seg_max[segments])
    denom = np.bincount(segments, weights=e, minlength=num_segments)
    out = e / denom[segments]

    def bwd(g, grads):
        dot = np.bincount(segments, weights=out * g, minlength=num_segments)
        _acc(grads, logits.node_id, out * (g - dot[segments]))

    return logits.tape._push("segment_softmax", (logits.node_id,), out, bwd)


# ---------------------------------------------------------------------------
# fused neighbor message op
# ---------------------------------------------------------------------------

def edge_message_sum(h: Tensor, mats: Tensor,
                     adjacency: Sequence[sp.csr_matrix]) -> Tensor:
    """Per-node sum of neighbor messages, grouped by edge-feature class.

    mats is [U x d_in x d]; adjacency[u] is the [N x N] 0/1 matrix whose
    (v, w) entry marks a directed edge w -> v carrying edge class u.  The
    result row v is sum over incoming edges of h[w] @ mats[class(e)] --
    exactly gather + per-edge matvec + segment-sum onto the target node,
    evaluated as one sparse matmul per edge class.
    """
    tape = _same_tape(h, mats)
    if mats.data.ndim != 3 or mats.data.shape[0] != len(adjacency):
        raise ShapeMismatchError(
            f"edge_message_sum: mats {mats.data.shape} vs {len(adjacency)} classes"
        )
    n, d_in = h.data.shape
    if mats.data.shape[1] != d_in:
        raise ShapeMismatchError(
            f"edge_message_sum: h {h.data.shape} vs mats {mats.data.shape}"
        )
    d = mats.data.shape[2]
    projected = [h.data @ mats.data[u] for u in range(len(adjacency))]
    out = np.zeros((n, d))
    for a, p in zip(adjacency, projected):
        out += a @ p
    hd = h.data
    adj_t = [a.T.tocsr() for a in adjacency]

    def bwd(g, grads):
        dh = np.zeros_like(hd)
        dm = np.empty_like(mats.data)
        for u, at in enumerate(adj_t):
            dp = at @ g
            dh += dp @ mats.data[u].T
            dm[u] = hd.T @ dp
        _acc(grads, h.node_id, dh)
        _acc(grads, mats.node_id, dm)

    return tape._push("edge_message_sum", (h.node_id, mats.node_id), out, bwd)


# ---------------------------------------------------------------------------
# LSTM cell
# ---------------------------------------------------------------------------

def lstm_cell(x: Tensor, h: Tensor, c: Tensor, wi: Tensor, wh: Tensor,
              b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step with packed gates (input, forget, candidate, output).

    wi: [input_dim x 4d], wh: [d x 4d], b: [4d].  Fully differentiable.
    """
    d = h.data.shape[1]
    if wi.data.shape != (x.data.shape[1], 4 * d) or wh.data.shape != (d, 4 * d):
        raise ShapeMismatchError(
            f"lstm_cell: x {x.data.shape}, h {h.data.shape}, "
            f"wi {wi.data.shape}, wh {wh.data.shape}"
        )
    z = add(add(matmul(x, wi), matmul(h, wh)), b)
    i = sigmoid(slice_cols(z, 0, d))
    f = sigmoid(slice_cols(z, d, 2 * d))
    g = tanh(slice_cols(z, 2 * d, 3 * d))
    o = sigmoid(slice_cols(z, 3 * d, 4 * d))
    c_next = add(mul(f, c), mul(i, g))
    h_next = mul(o, tanh(c_next))
    return h_next, c_next


# ---------------------------------------------------------------------------
# parameter checkpoint file
# ---------------------------------------------------------------------------

def save_params(path, params: dict[str, np.ndarray]) -> None:
    """Write a JSON index line followed by raw little-endian f64 blocks."""
    index = {}
    blobs = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        index[name] = {"shape": list(arr.shape), "offset": offset}
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    with open(path, "wb") as fh:
        fh.write(json.dumps(index, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_params(path) -> dict[str, np.ndarray]:
    """Inverse of save_params; byte-exact round trip."""
    with open(path, "rb") as fh:
        index = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    out = {}
    for name, meta in index.items():
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = meta["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        out[name] = arr.reshape(shape).astype(np.float64)
    return out
