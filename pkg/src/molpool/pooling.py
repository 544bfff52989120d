"""Readout functions: per-graph fingerprints from per-node states.

Sum, mean, and max delegate to the segment reductions; set2set runs an
LSTM-with-attention loop and returns a fingerprint twice the node width.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor as T


class Pooling(Enum):
    SUM = "sum"
    MEAN = "mean"
    MAX = "max"
    SET2SET = "set2set"


@dataclass(frozen=True)
class PoolingKind:
    kind: Pooling
    t_steps: int = 3

    def __post_init__(self):
        if self.kind is Pooling.SET2SET and self.t_steps < 1:
            raise ValueError(f"set2set needs t_steps >= 1, got {self.t_steps}")

    @classmethod
    def from_string(cls, name: str, t_steps: int = 3) -> "PoolingKind":
        try:
            kind = Pooling(name.strip().lower())
        except ValueError:
            valid = ", ".join(p.value for p in Pooling)
            raise ValueError(f"unknown pooling {name!r}; expected one of {valid}")
        return cls(kind, t_steps)

    def fingerprint_width(self, hidden_dim: int) -> int:
        return 2 * hidden_dim if self.kind is Pooling.SET2SET else hidden_dim

    @property
    def needs_params(self) -> bool:
        return self.kind is Pooling.SET2SET


def set2set(node_states: T.Tensor, graph_index: np.ndarray, num_graphs: int,
            wi: T.Tensor, wh: T.Tensor, b: T.Tensor, t_steps: int) -> T.Tensor:
    """Attention readout: t_steps LSTM queries over the node states.

    The query vector q_t is the LSTM hidden state fed with the previous
    step's [query, readout] pair; attention logits are plain dot products
    h_v . q.  Starts from zero query and zero LSTM state; hidden and cell
    carry across the t_steps of one call only.
    """
    tape = node_states.tape
    n, d = node_states.data.shape
    if wi.data.shape != (2 * d, 4 * d):
        raise T.ShapeMismatchError(
            f"set2set expects wi (2d x 4d) = {(2 * d, 4 * d)}, got {wi.data.shape}"
        )
    q_star = tape.leaf(np.zeros((num_graphs, 2 * d)))
    hidden = tape.leaf(np.zeros((num_graphs, d)))
    cell = tape.leaf(np.zeros((num_graphs, d)))
    for _ in range(t_steps):
        hidden, cell = T.lstm_cell(q_star, hidden, cell, wi, wh, b)
        q = hidden
        logits = T.row_sum(T.mul(node_states, T.gather_rows(q, graph_index)))
        attention = T.segment_softmax(logits, graph_index, num_graphs)
        readout = T.segment_sum(T.scale_rows(node_states, attention),
                                graph_index, num_graphs)
        q_star = T.concat_cols(q, readout)
    return q_star


def pool(node_states: T.Tensor, graph_index: np.ndarray, num_graphs: int,
         kind: PoolingKind, params: dict[str, T.Tensor] | None = None) -> T.Tensor:
    """Reduce node states to fingerprints: [G x d], or [G x 2d] for set2set."""
    if kind.kind is Pooling.SUM:
        return T.segment_sum(node_states, graph_index, num_graphs)
    if kind.kind is Pooling.MEAN:
        return T.segment_mean(node_states, graph_index, num_graphs)
    if kind.kind is Pooling.MAX:
        return T.segment_max(node_states, graph_index, num_graphs)
    if params is None:
        raise ValueError("set2set pooling needs LSTM parameters")
    return set2set(node_states, graph_index, num_graphs,
                   params["set2set.lstm.wi"], params["set2set.lstm.wh"],
                   params["set2set.lstm.b"], kind.t_steps)
