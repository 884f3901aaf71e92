"""Dense layers, MLPs and the message-passing graph encoder."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Module:
    """Holds named parameters; submodules register under dotted names."""

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out[name] = val
            elif isinstance(val, Module):
                for sub, p in val.parameters().items():
                    out[f"{name}.{sub}"] = p
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        for sub, p in item.parameters().items():
                            out[f"{name}.{i}.{sub}"] = p
        return out


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, gain: float = 1.0):
        # Glorot-style uniform init scaled by ``gain``
        limit = gain * np.sqrt(6.0 / (n_in + n_out))
        self.weight = ag.param(rng.uniform(-limit, limit, size=(n_in, n_out)))
        self.bias = ag.param(np.zeros(n_out))
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x) -> Tensor:
        return ag.matmul(x, self.weight) + self.bias


class MLP(Module):
    """Two dense layers with a tanh hidden layer; ``out_act`` optionally tanh."""

    def __init__(self, n_in, n_hidden, n_out, rng, out_gain=1.0, out_act=False):
        self.hidden = Dense(n_in, n_hidden, rng)
        self.out = Dense(n_hidden, n_out, rng, gain=out_gain)
        self.out_act = out_act

    def __call__(self, x) -> Tensor:
        y = self.out(ag.tanh(self.hidden(x)))
        return ag.tanh(y) if self.out_act else y


class MessagePassingLayer(Module):
    """message_e = MLP([h_src, edge_feat]); h_v' = tanh(W [h_v, sum of incoming messages])."""

    def __init__(self, n_hidden: int, n_edge: int, rng):
        self.message = MLP(n_hidden + n_edge, n_hidden, n_hidden, rng, out_act=True)
        self.update = Dense(2 * n_hidden, n_hidden, rng)

    def __call__(self, h, edge_x, src, dst, n_nodes) -> Tensor:
        if len(src):
            m = self.message(ag.concat([ag.take_rows(h, src), edge_x], axis=1))
            agg = ag.segment_sum(m, dst, n_nodes)
        else:
            agg = Tensor(np.zeros(h.shape))
        return ag.tanh(self.update(ag.concat([h, agg], axis=1)))


class GraphEncoder(Module):
    """Embeds nodes, runs message passing rounds, mean-pools a fingerprint per graph."""

    def __init__(self, n_node: int, n_edge: int, n_hidden: int = 64, n_layers: int = 2, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.embed = Dense(n_node, n_hidden, rng)
        self.layers = [MessagePassingLayer(n_hidden, n_edge, rng) for _ in range(n_layers)]
        self.n_node, self.n_edge, self.n_hidden = n_node, n_edge, n_hidden

    def __call__(self, node_x, edge_x, src, dst, node_graph, n_graphs):
        node_x = ag._t(node_x)
        edge_x = ag._t(edge_x)
        if node_x.shape[1] != self.n_node or (len(src) and edge_x.shape[1] != self.n_edge):
            raise ValueError(f"feature dims {node_x.shape[1]}/{edge_x.shape[-1]} do not match "
                             f"encoder dims {self.n_node}/{self.n_edge}")
        n_nodes = node_x.shape[0]
        h = ag.tanh(self.embed(node_x))
        for layer in self.layers:
            h = layer(h, edge_x, src, dst, n_nodes)
        fp = ag.segment_mean(h, node_graph, n_graphs)
        return h, fp


def forward_graph(encoder: GraphEncoder, node_x, edge_x, adjacency, node_graph=None, n_graphs=1):
    """Node embeddings and fingerprint; ``adjacency`` is a pair (src, dst) of index arrays."""
    src, dst = adjacency
    if node_graph is None:
        node_graph = np.zeros(np.asarray(node_x).shape[0], dtype=np.int64)
    return encoder(node_x, edge_x, np.asarray(src, dtype=np.int64),
                   np.asarray(dst, dtype=np.int64), node_graph, n_graphs)
