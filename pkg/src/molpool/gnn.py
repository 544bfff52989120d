"""The message-passing stack.

Each layer updates node states with a learned self-transform plus a sum of
neighbor messages, where the per-edge message matrix comes either from a
small network over bond features or from one shared learned matrix.  Edges
with identical features get identical matrices, so the edge network runs
on the batch's unique feature rows and neighbor aggregation becomes one
sparse matmul per feature class.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .molgraph import FeaturizedBatch
from .pooling import Pooling, PoolingKind


class ConfigError(ValueError):
    """Inconsistent model configuration."""


class EdgeMode(Enum):
    EDGE_NETWORK = "edge_network"
    SHARED_MATRIX = "shared_matrix"


@dataclass(frozen=True)
class GnnConfig:
    hidden_dim: int = 64
    num_layers: int = 3
    edge_mode: EdgeMode = EdgeMode.EDGE_NETWORK
    edge_net_hidden: int = 128
    mlp_layers: tuple[int, ...] | None = None     # resolved per pooling kind

    def __post_init__(self):
        if self.hidden_dim < 1 or self.num_layers < 1 or self.edge_net_hidden < 1:
            raise ConfigError(f"non-positive dimension in {self}")


def resolve_mlp_layers(config: GnnConfig, pooling: PoolingKind) -> tuple[int, ...]:
    """Full width chain of the readout MLP, fingerprint width first."""
    k = pooling.fingerprint_width(config.hidden_dim)
    if config.mlp_layers is not None:
        widths = tuple(config.mlp_layers)
        if widths[-1] != 1:
            raise ConfigError(f"mlp_layers must end in 1, got {widths}")
        if widths[0] != k:
            raise ConfigError(
                f"mlp_layers must start at fingerprint width {k}, got {widths}"
            )
        return widths
    if config.hidden_dim == 64:
        return (128, 64, 32, 1) if k == 128 else (64, 32, 16, 1)
    return (k, max(2, k // 2), 1)


# ---------------------------------------------------------------------------
# batch preparation
# ---------------------------------------------------------------------------

@dataclass
class PreparedBatch:
    """A featurized batch with the per-edge-class sparse adjacency prebuilt."""

    node_features: np.ndarray
    graph_index: np.ndarray
    num_graphs: int
    unique_edge_features: np.ndarray       # [U x F_E]
    adjacency: list                        # U csr matrices, (target, source)
    num_nodes: int


def prepare_batch(batch: FeaturizedBatch, edge_mode: EdgeMode) -> PreparedBatch:
    n = batch.node_features.shape[0]
    src = batch.edge_index[:, 0] if len(batch.edge_index) else np.zeros(0, np.int64)
    dst = batch.edge_index[:, 1] if len(batch.edge_index) else np.zeros(0, np.int64)

    def adj_for(mask: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix(
            (np.ones(int(mask.sum())), (dst[mask], src[mask])), shape=(n, n)
        )

    if edge_mode is EdgeMode.SHARED_MATRIX:
        # one class regardless of features; the matrix is a learned parameter
        unique = np.zeros((1, batch.edge_features.shape[1]))
        adjacency = [adj_for(np.ones(len(src), dtype=bool))]
    elif len(src) == 0:
        unique = np.zeros((0, batch.edge_features.shape[1]))
        adjacency = []
    else:
        unique, inverse = np.unique(batch.edge_features, axis=0,
                                    return_inverse=True)
        inverse = inverse.reshape(-1)
        adjacency = [adj_for(inverse == u) for u in range(unique.shape[0])]
    return PreparedBatch(batch.node_features, batch.graph_index,
                         batch.num_graphs, unique, adjacency, n)


# ---------------------------------------------------------------------------
# parameter initialization and binding
# ---------------------------------------------------------------------------

def init_params(config: GnnConfig, node_width: int, edge_width: int,
                pooling: PoolingKind, seed: int) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, LSTM forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    d = config.hidden_dim

    def glorot(fan_in: int, fan_out: int) -> np.ndarray:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    params: dict[str, np.ndarray] = {}
    d_in = node_width
    for l in range(config.num_layers):
        params[f"conv{l}.theta_v"] = glorot(d_in, d)
        if config.edge_mode is EdgeMode.SHARED_MATRIX:
            params[f"conv{l}.theta_e"] = glorot(d_in, d)
        else:
            h = config.edge_net_hidden
            params[f"conv{l}.edge.w1"] = glorot(edge_width, h)
            params[f"conv{l}.edge.b1"] = np.zeros(h)
            params[f"conv{l}.edge.w2"] = glorot(h, d_in * d)
            params[f"conv{l}.edge.b2"] = np.zeros(d_in * d)
        d_in = d
    if pooling.kind is Pooling.SET2SET:
        params["set2set.lstm.wi"] = glorot(2 * d, 4 * d)
        params["set2set.lstm.wh"] = glorot(d, 4 * d)
        bias = np.zeros(4 * d)
        bias[d:2 * d] = 1.0
        params["set2set.lstm.b"] = bias
    widths = resolve_mlp_layers(config, pooling)
    for i in range(len(widths) - 1):
        params[f"mlp.{i}.w"] = glorot(widths[i], widths[i + 1])
        params[f"mlp.{i}.b"] = np.zeros(widths[i + 1])
    return params


def bind_params(tape: T.Tape, params: dict[str, np.ndarray]) -> dict[str, T.Tensor]:
    """Register every parameter array as a leaf on a fresh tape."""
    return {name: tape.leaf(arr) for name, arr in params.items()}


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def edge_network(tape: T.Tape, prepared: PreparedBatch,
                 params: dict[str, T.Tensor], layer: int,
                 d_in: int, d: int) -> T.Tensor:
    """Per-edge-class message matrices [U x d_in x d] from bond features."""
    u = prepared.unique_edge_features.shape[0]
    feats = tape.leaf(prepared.unique_edge_features)
    hidden = T.relu(T.add(T.matmul(feats, params[f"conv{layer}.edge.w1"]),
                          params[f"conv{layer}.edge.b1"]))
    flat = T.add(T.matmul(hidden, params[f"conv{layer}.edge.w2"]),
                 params[f"conv{layer}.edge.b2"])
    return T.reshape(flat, (u, d_in, d))


def gnn_forward(tape: T.Tape, prepared: PreparedBatch,
                params: dict[str, T.Tensor], config: GnnConfig) -> T.Tensor:
    """Node states after num_layers message-passing updates, [N x d]."""
    h = tape.leaf(prepared.node_features)
    d = config.hidden_dim
    d_in = prepared.node_features.shape[1]
    for l in range(config.num_layers):
        if config.edge_mode is EdgeMode.SHARED_MATRIX:
            mats = T.reshape(params[f"conv{l}.theta_e"], (1, d_in, d))
        else:
            mats = edge_network(tape, prepared, params, l, d_in, d)
        messages = T.edge_message_sum(h, mats, prepared.adjacency)
        h = T.relu(T.add(T.matmul(h, params[f"conv{l}.theta_v"]), messages))
        if not np.all(np.isfinite(h.data)):
            raise T.NonFiniteError(f"non-finite node states after layer {l}")
        d_in = d
    return h


def mlp_forward(fingerprints: T.Tensor, params: dict[str, T.Tensor],
                widths: tuple[int, ...]) -> T.Tensor:
    """ReLU MLP over fingerprints; linear output layer, [G x 1]."""
    if fingerprints.data.shape[1] != widths[0]:
        raise T.ShapeMismatchError(
            f"fingerprint width {fingerprints.data.shape[1]} vs mlp input {widths[0]}"
        )
    x = fingerprints
    last = len(widths) - 2
    for i in range(len(widths) - 1):
        x = T.add(T.matmul(x, params[f"mlp.{i}.w"]), params[f"mlp.{i}.b"])
        if i < last:
            x = T.relu(x)
    if not np.all(np.isfinite(x.data)):
        raise T.NonFiniteError("non-finite predictions in readout MLP")
    return x
